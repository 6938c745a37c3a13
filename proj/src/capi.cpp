#include "cropadapt/cropadapt.h"

#include "cropadapt/adapt.hpp"
#include "cropadapt/config.hpp"
#include "cropadapt/data.hpp"
#include "cropadapt/error.hpp"
#include "cropadapt/eval.hpp"
#include "cropadapt/image.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

using namespace cropadapt;
namespace fs = std::filesystem;

struct ca_dataset {
    Dataset ds;
};

struct ca_model {
    Model params;
    Provenance provenance;
};

static_assert(CA_INVALID_ARGUMENT == static_cast<int>(ErrorCode::InvalidArgument));
static_assert(CA_MISMATCHED_SETS == static_cast<int>(ErrorCode::MismatchedSets));

namespace {

thread_local std::string g_last_error;

ca_status fail(ca_status s, std::string msg) {
    g_last_error = std::move(msg);
    return s;
}

// Runs f, translating every exception into a status plus message.
template <class F>
ca_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return CA_OK;
    } catch (const Error& e) {
        return fail(static_cast<ca_status>(e.code()), e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(CA_SCHEMA_VIOLATION, e.what());
    } catch (const std::bad_alloc&) {
        return fail(CA_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(CA_INTERNAL, e.what());
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

char* dup(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

void put(char** out, const std::string& s) {
    if (out) *out = dup(s);
}

Json config_or_empty(const char* text, const char* what) {
    if (!text || !*text) return Json::object();
    return parse_json(text, what);
}

Eye eye_from_name(const std::string& name) {
    if (name == "left") return Eye::Left;
    if (name == "right") return Eye::Right;
    throw Error(ErrorCode::InvalidArgument, "eye must be \"left\" or \"right\", got \"" + name + "\"");
}

std::string model_hash(const Model& m) {
    std::string bytes = Json(m.arch).dump();
    for (bool f : m.frozen) bytes.push_back(f ? '1' : '0');
    for (const auto& t : m.tensors)
        bytes.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
    return sha256_hex(bytes);
}

Json provenance_json(const Provenance& p) {
    return {{"stage", p.stage},
            {"seed", p.seed},
            {"config_hash", p.config_hash},
            {"parent_hash", p.parent_hash},
            {"adaptation_ids", p.adaptation_ids}};
}

EvalReport report_from_json(const Json& j) {
    EvalReport r;
    r.domain = j.at("domain").get<std::string>();
    r.model_hash = j.at("model_hash").get<std::string>();
    r.eye = eye_from_name(j.at("eye").get<std::string>());
    r.count = j.at("count").get<std::size_t>();
    for (int k = 0; k < 3; ++k) r.mean_l1[k] = j.at("mean_l1").at(kKeypointNames[k]).get<double>();
    r.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    return r;
}

}  // namespace

extern "C" {

const char* ca_version(void) { return "0.1.0"; }

const char* ca_status_name(ca_status status) {
    if (status == CA_OK) return "Ok";
    if (status == CA_INTERNAL) return "Internal";
    if (status >= CA_INVALID_ARGUMENT && status <= CA_MISMATCHED_SETS)
        return error_code_name(static_cast<ErrorCode>(status));
    return "Unknown";
}

const char* ca_last_error(void) { return g_last_error.c_str(); }

void ca_string_free(char* s) { std::free(s); }

ca_status ca_sha256_hex(const char* data, size_t len, char** out_hex) {
    return guarded([&] {
        require(data || len == 0, "data is null");
        require(out_hex, "output is null");
        put(out_hex, sha256_hex(std::string_view(data ? data : "", len)));
    });
}

ca_status ca_file_sha256(const char* path, char** out_hex) {
    return guarded([&] {
        require(path && out_hex, "null argument");
        if (!fs::is_regular_file(path)) throw Error(ErrorCode::MissingFile, std::string("no such file: ") + path);
        put(out_hex, sha256_file(path));
    });
}

ca_status ca_dataset_generate(const char* out_dir, const char* scene_json, const char* domain_json, size_t count,
                              uint64_t seed, char** out_hash) {
    return guarded([&] {
        require(out_dir && *out_dir, "output directory is empty");
        require(domain_json && *domain_json, "domain is empty");
        const Json scene = config_or_empty(scene_json, "scene");
        CameraRig rig;
        RowGeometry rows;
        PoseRanges ranges;
        SimOptions opts;
        for (auto it = scene.begin(); it != scene.end(); ++it) {
            if (it.key() == "rig")
                from_json(*it, rig);
            else if (it.key() == "rows")
                from_json(*it, rows);
            else if (it.key() == "pose_ranges")
                from_json(*it, ranges);
            else if (it.key() == "sim")
                from_json(*it, opts);
            else
                throw Error(ErrorCode::SchemaViolation, "scene." + it.key() + ": unknown field");
        }
        const DomainAppearance domain = domain_from_json(parse_json(domain_json, "domain"));
        generate_dataset(rig, rows, domain, ranges, count, seed, out_dir, opts);
        put(out_hash, dataset_hash(out_dir));
    });
}

ca_status ca_dataset_hash(const char* dir, char** out_hash) {
    return guarded([&] {
        require(dir && out_hash, "null argument");
        put(out_hash, dataset_hash(dir));
    });
}

ca_status ca_dataset_open(const char* dir, ca_dataset** out) {
    return guarded([&] {
        require(dir && out, "null argument");
        *out = nullptr;
        *out = new ca_dataset{load_dataset(dir)};
    });
}

void ca_dataset_close(ca_dataset* ds) { delete ds; }

ca_status ca_dataset_size(const ca_dataset* ds, size_t* out) {
    return guarded([&] {
        require(ds && out, "null argument");
        *out = ds->ds.size();
    });
}

ca_status ca_dataset_info(const ca_dataset* ds, char** out_json) {
    return guarded([&] {
        require(ds && out_json, "null argument");
        const DatasetManifest& m = ds->ds.manifest();
        const Json j = {{"version", m.version}, {"rig", m.rig},   {"rows", m.rows},
                        {"domain", m.domain},   {"seed", m.seed}, {"count", m.samples.size()}};
        put(out_json, j.dump());
    });
}

ca_status ca_model_init(const char* architecture_json, uint64_t seed, ca_model** out) {
    return guarded([&] {
        require(out, "output is null");
        *out = nullptr;
        Architecture arch;
        const Json j = config_or_empty(architecture_json, "architecture");
        if (!j.empty()) from_json(j, arch);
        auto* m = new ca_model{init_params<float>(arch, seed), {}};
        m->provenance.stage = "init";
        m->provenance.seed = seed;
        *out = m;
    });
}

ca_status ca_model_load(const char* path, ca_model** out) {
    return guarded([&] {
        require(path && out, "null argument");
        *out = nullptr;
        ModelArtifact art = load_model(path);
        *out = new ca_model{std::move(art.params), std::move(art.provenance)};
    });
}

ca_status ca_model_save(const ca_model* model, const char* path) {
    return guarded([&] {
        require(model && path && *path, "null argument");
        save_model(path, model->params, model->provenance);
    });
}

ca_status ca_model_clone(const ca_model* model, ca_model** out) {
    return guarded([&] {
        require(model && out, "null argument");
        *out = new ca_model(*model);
    });
}

void ca_model_free(ca_model* model) { delete model; }

ca_status ca_model_hash(const ca_model* model, char** out_hash) {
    return guarded([&] {
        require(model && out_hash, "null argument");
        put(out_hash, model_hash(model->params));
    });
}

ca_status ca_model_provenance(const ca_model* model, char** out_json) {
    return guarded([&] {
        require(model && out_json, "null argument");
        put(out_json, provenance_json(model->provenance).dump());
    });
}

ca_status ca_train_source(ca_model* model, const ca_dataset* ds, const char* train_json, uint64_t seed,
                          ca_progress_fn progress, void* user, char** out_losses) {
    return guarded([&] {
        require(model && ds, "null argument");
        TrainConfig cfg;
        from_json(config_or_empty(train_json, "train"), cfg);
        cfg.seed = seed;
        cfg.validate();
        const std::vector<StereoSample> samples = ds->ds.load_all();
        std::vector<LabeledImage> data;
        data.reserve(samples.size());
        for (const StereoSample& s : samples) data.push_back({&s.left, s.gt_left});
        const std::string parent = model_hash(model->params);
        ProgressFn fn;
        if (progress) fn = [&](int epoch, double loss) { progress(epoch, loss, user); };
        const TrainResult r = train_source(model->params, data, cfg, fn);
        model->provenance = {"source", seed, json_hash(Json(cfg)), parent, {}};
        put(out_losses, Json(r.epoch_loss).dump());
    });
}

ca_status ca_adapt(ca_model* model, const ca_dataset* target, const char* adapt_json, uint64_t seed,
                   const char* stage1, char** out_report_json, char** out_report_csv) {
    return guarded([&] {
        require(model && target, "null argument");
        AdaptConfig cfg;
        from_json(config_or_empty(adapt_json, "adapt"), cfg);
        cfg.seed = seed;
        if (stage1) cfg.stage1 = stage1_mode_from_name(stage1);
        cfg.validate();
        const std::vector<StereoSample> samples = target->ds.load_all();
        const DatasetManifest& m = target->ds.manifest();
        const std::string parent = model_hash(model->params);
        Model work = model->params;
        const AdaptReport r = adapt_pipeline(m.rig, m.rows, work, samples, cfg);
        std::vector<std::string> ids = model->provenance.adaptation_ids;
        for (const StereoSample& s : samples) ids.push_back(s.id);
        model->params = std::move(work);
        model->provenance = {"adapted", seed, json_hash(Json(cfg)), parent, std::move(ids)};
        put(out_report_json, r.to_json());
        put(out_report_csv, r.to_csv());
    });
}

ca_status ca_eval(ca_model* model, const ca_dataset* labeled, const char* eye, char** out_report_json,
                  char** out_report_csv) {
    return guarded([&] {
        require(model && labeled, "null argument");
        const Eye e = eye_from_name(eye ? eye : "left");
        const std::vector<StereoSample> samples = labeled->ds.load_all();
        EvalReport r = mean_l1(model->params, samples, e, model->provenance.adaptation_ids);
        r.model_hash = model_hash(model->params);
        put(out_report_json, r.to_json());
        put(out_report_csv, r.to_csv());
    });
}

ca_status ca_compare(const char* before_json, const char* after_json, char** out_text, char** out_csv) {
    return guarded([&] {
        require(before_json && after_json, "null argument");
        const EvalReport before = report_from_json(parse_json(before_json, "before report"));
        const EvalReport after = report_from_json(parse_json(after_json, "after report"));
        const Comparison c = compare_report(before, after);
        put(out_text, c.to_text());
        put(out_csv, c.to_csv());
    });
}

ca_status ca_viz(ca_model* model, const ca_dataset* ds, const char* out_dir, size_t n, char** out_files) {
    return guarded([&] {
        require(model && ds && out_dir && *out_dir, "null argument");
        fs::create_directories(out_dir);
        const std::size_t count = std::min(n, ds->ds.size());
        std::vector<StereoSample> samples;
        std::vector<const Image*> images;
        for (std::size_t i = 0; i < count; ++i) samples.push_back(ds->ds.load(i));
        for (const StereoSample& s : samples) images.push_back(&s.left);
        const std::vector<KeypointTriple> pred = predict_triples(model->params, images);
        Json files = Json::array();
        for (std::size_t i = 0; i < count; ++i) {
            const std::string name = samples[i].id + "_overlay.png";
            write_png(fs::path(out_dir) / name, render_overlay(samples[i].left, pred[i], samples[i].gt_left));
            files.push_back(name);
        }
        put(out_files, files.dump());
    });
}

}  // extern "C"
