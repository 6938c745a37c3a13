#include "cropadapt/config.hpp"

#include "cropadapt/data.hpp"
#include "cropadapt/error.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace cropadapt {

namespace {

// Reads named fields of one JSON object, tracking which keys were consumed.
class Fields {
public:
    Fields(const Json& j, const char* what) : j_(j), what_(what) {
        if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, std::string(what) + ": expected an object");
    }

    template <class T>
    Fields& opt(const char* key, T& dst) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return *this;
        try {
            dst = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::SchemaViolation, std::string(what_) + "." + key + ": " + e.what());
        }
        return *this;
    }

    template <class T>
    Fields& req(const char* key, T& dst) {
        if (!j_.contains(key))
            throw Error(ErrorCode::SchemaViolation, std::string(what_) + "." + key + ": missing field");
        return opt(key, dst);
    }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw Error(ErrorCode::SchemaViolation, std::string(what_) + "." + it.key() + ": unknown field");
    }

private:
    const Json& j_;
    const char* what_;
    std::set<std::string> seen_;
};

}  // namespace

void to_json(Json& j, const CameraRig& v) {
    j = {{"fx", v.fx},       {"fy", v.fy},         {"cx", v.cx},           {"cy", v.cy},
         {"width", v.width}, {"height", v.height}, {"baseline", v.baseline}, {"cam_height", v.cam_height}};
}
void from_json(const Json& j, CameraRig& v) {
    Fields(j, "rig")
        .opt("fx", v.fx)
        .opt("fy", v.fy)
        .opt("cx", v.cx)
        .opt("cy", v.cy)
        .opt("width", v.width)
        .opt("height", v.height)
        .opt("baseline", v.baseline)
        .opt("cam_height", v.cam_height)
        .done();
}

void to_json(Json& j, const RowGeometry& v) { j = {{"row_spacing", v.row_spacing}, {"robot_width", v.robot_width}}; }
void from_json(const Json& j, RowGeometry& v) {
    Fields(j, "rows").opt("row_spacing", v.row_spacing).opt("robot_width", v.robot_width).done();
}

void to_json(Json& j, const Pose& v) {
    j = {{"roll", v.roll}, {"pitch", v.pitch}, {"yaw", v.yaw}, {"x_off", v.x_off}};
}
void from_json(const Json& j, Pose& v) {
    Fields(j, "pose").req("roll", v.roll).req("pitch", v.pitch).req("yaw", v.yaw).req("x_off", v.x_off).done();
}

void to_json(Json& j, const PixelPoint& v) { j = Json::array({v.u, v.v}); }
void from_json(const Json& j, PixelPoint& v) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw Error(ErrorCode::SchemaViolation, "pixel point: expected [u, v]");
    v.u = j[0].get<double>();
    v.v = j[1].get<double>();
}

void to_json(Json& j, const KeypointTriple& v) { j = {{"vp", v.vp}, {"li", v.li}, {"ri", v.ri}}; }
void from_json(const Json& j, KeypointTriple& v) {
    Fields(j, "triple").req("vp", v.vp).req("li", v.li).req("ri", v.ri).done();
}

void to_json(Json& j, const ConstraintTolerances& v) {
    j = {{"width_rel_tol", v.width_rel_tol}, {"disp_abs_tol", v.disp_abs_tol}, {"bounds_margin", v.bounds_margin}};
}
void from_json(const Json& j, ConstraintTolerances& v) {
    Fields(j, "tolerances")
        .opt("width_rel_tol", v.width_rel_tol)
        .opt("disp_abs_tol", v.disp_abs_tol)
        .opt("bounds_margin", v.bounds_margin)
        .done();
}

void to_json(Json& j, const Range& v) { j = Json::array({v.lo, v.hi}); }
void from_json(const Json& j, Range& v) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw Error(ErrorCode::SchemaViolation, "range: expected [lo, hi]");
    v.lo = j[0].get<double>();
    v.hi = j[1].get<double>();
}

void to_json(Json& j, const PoseRanges& v) {
    j = {{"roll", v.roll}, {"pitch", v.pitch}, {"yaw", v.yaw}, {"x_off", v.x_off}};
}
void from_json(const Json& j, PoseRanges& v) {
    Fields(j, "pose_ranges").opt("roll", v.roll).opt("pitch", v.pitch).opt("yaw", v.yaw).opt("x_off", v.x_off).done();
}

void to_json(Json& j, const DomainAppearance& v) {
    auto rgb = [](const Rgb& c) { return Json::array({c[0], c[1], c[2]}); };
    j = {{"name", v.name},
         {"ground_palette", {rgb(v.ground_palette[0]), rgb(v.ground_palette[1])}},
         {"row_palette", {rgb(v.row_palette[0]), rgb(v.row_palette[1])}},
         {"sky", rgb(v.sky)},
         {"texture_scale", v.texture_scale},
         {"row_wall_height", v.row_wall_height},
         {"clutter_density", v.clutter_density},
         {"noise_sigma", v.noise_sigma}};
}
void from_json(const Json& j, DomainAppearance& v) {
    Fields(j, "domain")
        .opt("name", v.name)
        .opt("ground_palette", v.ground_palette)
        .opt("row_palette", v.row_palette)
        .opt("sky", v.sky)
        .opt("texture_scale", v.texture_scale)
        .opt("row_wall_height", v.row_wall_height)
        .opt("clutter_density", v.clutter_density)
        .opt("noise_sigma", v.noise_sigma)
        .done();
}

void to_json(Json& j, const SimOptions& v) { j = {{"imu_sigma", v.imu_sigma}}; }
void from_json(const Json& j, SimOptions& v) { Fields(j, "sim").opt("imu_sigma", v.imu_sigma).done(); }

void to_json(Json& j, const TrainConfig& v) {
    j = {{"learning_rate", v.learning_rate}, {"batch_size", v.batch_size},     {"epochs", v.epochs},
         {"weight_decay", v.weight_decay},   {"seed", v.seed},                 {"augment", v.augment},
         {"color_jitter", v.color_jitter},
         {"heatmap_sigma", v.heatmap_sigma}, {"optimizer", v.optimizer},       {"keypoint_weight", v.keypoint_weight},
         {"cosine_schedule", v.cosine_schedule}};
}
void from_json(const Json& j, TrainConfig& v) {
    Fields(j, "train")
        .opt("learning_rate", v.learning_rate)
        .opt("batch_size", v.batch_size)
        .opt("epochs", v.epochs)
        .opt("weight_decay", v.weight_decay)
        .opt("seed", v.seed)
        .opt("augment", v.augment)
        .opt("color_jitter", v.color_jitter)
        .opt("heatmap_sigma", v.heatmap_sigma)
        .opt("optimizer", v.optimizer)
        .opt("keypoint_weight", v.keypoint_weight)
        .opt("cosine_schedule", v.cosine_schedule)
        .done();
}

void to_json(Json& j, const AdaptConfig& v) {
    j = {{"gate_disp_threshold", v.gate_disp_threshold},
         {"gate_fraction", v.gate_fraction},
         {"stage1_batch_size", v.stage1_batch_size},
         {"stage1_weight_decay", v.stage1_weight_decay},
         {"stage1_learning_rate", v.stage1_learning_rate},
         {"stage1_max_steps", v.stage1_max_steps},
         {"stage1_stop_loss", v.stage1_stop_loss},
         {"lambda_v", v.lambda_v},
         {"pseudo_iterations", v.pseudo_iterations},
         {"stage2_learning_rate", v.stage2_learning_rate},
         {"stage2_epochs", v.stage2_epochs},
         {"stage2_batch_size", v.stage2_batch_size},
         {"stage2_weight_decay", v.stage2_weight_decay},
         {"heatmap_sigma", v.heatmap_sigma},
         {"keypoint_weight", v.keypoint_weight},
         {"flip_augment", v.flip_augment},
         {"tolerances", v.tolerances},
         {"seed", v.seed},
         {"stage1", stage1_mode_name(v.stage1)}};
}
void from_json(const Json& j, AdaptConfig& v) {
    std::string mode = stage1_mode_name(v.stage1);
    Fields(j, "adapt")
        .opt("gate_disp_threshold", v.gate_disp_threshold)
        .opt("gate_fraction", v.gate_fraction)
        .opt("stage1_batch_size", v.stage1_batch_size)
        .opt("stage1_weight_decay", v.stage1_weight_decay)
        .opt("stage1_learning_rate", v.stage1_learning_rate)
        .opt("stage1_max_steps", v.stage1_max_steps)
        .opt("stage1_stop_loss", v.stage1_stop_loss)
        .opt("lambda_v", v.lambda_v)
        .opt("pseudo_iterations", v.pseudo_iterations)
        .opt("stage2_learning_rate", v.stage2_learning_rate)
        .opt("stage2_epochs", v.stage2_epochs)
        .opt("stage2_batch_size", v.stage2_batch_size)
        .opt("stage2_weight_decay", v.stage2_weight_decay)
        .opt("heatmap_sigma", v.heatmap_sigma)
        .opt("keypoint_weight", v.keypoint_weight)
        .opt("flip_augment", v.flip_augment)
        .opt("tolerances", v.tolerances)
        .opt("seed", v.seed)
        .opt("stage1", mode)
        .done();
    try {
        v.stage1 = stage1_mode_from_name(mode);
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("adapt.stage1: ") + e.what());
    }
}

void to_json(Json& j, const Architecture& v) {
    j = {{"encoder_channels", v.encoder_channels},
         {"encoder_kernel", v.encoder_kernel},
         {"dec1_channels", v.dec1_channels},
         {"dec2_channels", v.dec2_channels}};
}
void from_json(const Json& j, Architecture& v) {
    Fields(j, "architecture")
        .req("encoder_channels", v.encoder_channels)
        .opt("encoder_kernel", v.encoder_kernel)
        .req("dec1_channels", v.dec1_channels)
        .req("dec2_channels", v.dec2_channels)
        .done();
}

Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, what + ": " + e.what());
    }
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json(ss.str(), path.string());
}

DomainAppearance domain_from_json(const Json& j) {
    if (j.is_string()) return domain_preset(j.get<std::string>());
    if (!j.is_object() || !j.contains("preset") || !j["preset"].is_string())
        throw Error(ErrorCode::SchemaViolation, "domain: expected a preset name or an object with \"preset\"");
    DomainAppearance d = domain_preset(j["preset"].get<std::string>());
    Json rest = j;
    rest.erase("preset");
    from_json(rest, d);
    d.validate();
    return d;
}

std::string json_hash(const Json& j) { return sha256_hex(j.dump()); }

}  // namespace cropadapt
