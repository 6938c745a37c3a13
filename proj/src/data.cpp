#include "cropadapt/data.hpp"

#include "cropadapt/config.hpp"
#include "cropadapt/error.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace cropadapt {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "model payloads are written in host order");

constexpr std::size_t kHashChunk = 1 << 16;

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw Error(ErrorCode::Io, "SHA-256 initialisation failed");
    }
    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md, &len);
        static const char* digits = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

void hash_file_into(Sha256& h, const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    std::vector<char> buf(kHashChunk);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes via a sibling temporary so readers never observe a partial file.
void write_atomically(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::Io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw Error(ErrorCode::SchemaViolation, where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, where + ": field '" + key + "': " + e.what());
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaViolation, where + ": field '" + key + "': " + e.what());
    }
}

Json record_json(const SampleRecord& r) {
    return {{"id", r.id},
            {"left", r.left_path},
            {"right", r.right_path},
            {"imu_roll", r.imu_roll},
            {"true_pose", r.true_pose},
            {"gt_left", r.gt_left},
            {"gt_right", r.gt_right}};
}

SampleRecord record_from_json(const Json& j, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, where + ": expected an object");
    SampleRecord r;
    r.id = field<std::string>(j, "id", where);
    r.left_path = field<std::string>(j, "left", where);
    r.right_path = field<std::string>(j, "right", where);
    r.imu_roll = field<double>(j, "imu_roll", where);
    r.true_pose = field<Pose>(j, "true_pose", where);
    r.gt_left = field<KeypointTriple>(j, "gt_left", where);
    r.gt_right = field<KeypointTriple>(j, "gt_right", where);
    return r;
}

void check_relative(const std::string& p, const std::string& where) {
    const fs::path rel(p);
    if (p.empty() || rel.is_absolute() || p.find("..") != std::string::npos)
        throw Error(ErrorCode::SchemaViolation, where + ": image path must be relative to the dataset: " + p);
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const fs::path& path) {
    Sha256 h;
    hash_file_into(h, path);
    return h.hex();
}

std::string rig_hash(const CameraRig& rig) { return sha256_hex(Json(rig).dump()); }

Dataset::Dataset(fs::path root, DatasetManifest manifest) : root_(std::move(root)), manifest_(std::move(manifest)) {}

StereoSample Dataset::load(std::size_t index) const {
    if (index >= size()) throw Error(ErrorCode::InvalidArgument, "sample index out of range");
    const SampleRecord& r = manifest_.samples[index];
    StereoSample s;
    s.id = r.id;
    s.domain = manifest_.domain;
    s.left = read_png(root_ / r.left_path);
    s.right = read_png(root_ / r.right_path);
    s.imu_roll = r.imu_roll;
    s.true_pose = r.true_pose;
    s.gt_left = r.gt_left;
    s.gt_right = r.gt_right;
    return s;
}

std::vector<StereoSample> Dataset::load_all() const {
    std::vector<StereoSample> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(load(i));
    return out;
}

std::vector<std::string> Dataset::ids() const {
    std::vector<std::string> out;
    for (const auto& r : manifest_.samples) out.push_back(r.id);
    return out;
}

DatasetManifest save_dataset(const fs::path& dir, const CameraRig& rig, const RowGeometry& rows,
                             const std::string& domain, std::uint64_t seed, std::span<const StereoSample> samples) {
    rig.validate();
    rows.validate();
    std::error_code ec;
    fs::create_directories(dir / "left", ec);
    if (!ec) fs::create_directories(dir / "right", ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create dataset directory " + dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.rig = rig;
    m.rows = rows;
    m.domain = domain;
    m.seed = seed;
    m.rig_hash = rig_hash(rig);
    Json header = {{"version", m.version}, {"rig", rig},           {"rows", rows},
                   {"domain", domain},     {"seed", seed},         {"rig_hash", m.rig_hash},
                   {"count", samples.size()}};
    std::string text = header.dump() + "\n";
    for (const StereoSample& s : samples) {
        if (s.left.width != rig.width || s.left.height != rig.height || s.right.width != rig.width ||
            s.right.height != rig.height)
            throw Error(ErrorCode::ShapeMismatch, "sample " + s.id + " does not match the rig dimensions");
        SampleRecord r{s.id, "left/" + s.id + ".png", "right/" + s.id + ".png", s.imu_roll, s.true_pose, s.gt_left,
                       s.gt_right};
        write_png(dir / r.left_path, s.left);
        write_png(dir / r.right_path, s.right);
        text += record_json(r).dump() + "\n";
        m.samples.push_back(std::move(r));
    }
    write_atomically(dir / kManifestName, text);
    return m;
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path path = dir / kManifestName;
    if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, "no manifest at " + path.string());
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::SchemaViolation, path.string() + ": empty manifest");
    const Json header = parse_json(line, path.string() + ":1");
    if (!header.is_object()) throw Error(ErrorCode::SchemaViolation, path.string() + ":1: expected an object");
    const std::string where = path.string() + ":1";

    DatasetManifest m;
    m.version = field<std::string>(header, "version", where);
    if (m.version != kDatasetVersion)
        throw Error(ErrorCode::VersionMismatch,
                    where + ": field 'version' is '" + m.version + "', expected '" + kDatasetVersion + "'");
    m.rig = field<CameraRig>(header, "rig", where);
    m.rows = field<RowGeometry>(header, "rows", where);
    m.domain = field<std::string>(header, "domain", where);
    m.seed = field<std::uint64_t>(header, "seed", where);
    m.rig_hash = field<std::string>(header, "rig_hash", where);
    const auto count = field<std::size_t>(header, "count", where);
    try {
        m.rig.validate();
        m.rows.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaViolation, where + ": " + e.what());
    }
    if (m.rig_hash != rig_hash(m.rig))
        throw Error(ErrorCode::SchemaViolation, where + ": field 'rig_hash' does not match the rig snapshot");

    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string w = path.string() + ":" + std::to_string(lineno);
        SampleRecord r = record_from_json(parse_json(line, w), w);
        for (const std::string* p : {&r.left_path, &r.right_path}) {
            check_relative(*p, w);
            const fs::path img = dir / *p;
            if (!fs::exists(img)) throw Error(ErrorCode::MissingFile, w + ": missing image " + img.string());
            const ImageSize sz = png_size(img);
            if (sz.width != m.rig.width || sz.height != m.rig.height)
                throw Error(ErrorCode::SchemaViolation, w + ": image " + img.string() + " is " +
                                                            std::to_string(sz.width) + "x" + std::to_string(sz.height) +
                                                            " but the rig is " + std::to_string(m.rig.width) + "x" +
                                                            std::to_string(m.rig.height));
        }
        m.samples.push_back(std::move(r));
    }
    if (m.samples.size() != count)
        throw Error(ErrorCode::SchemaViolation, where + ": field 'count' is " + std::to_string(count) + " but " +
                                                    std::to_string(m.samples.size()) + " records follow");
    return Dataset(dir, std::move(m));
}

DatasetManifest generate_dataset(const CameraRig& rig, const RowGeometry& rows, const DomainAppearance& domain,
                                 const PoseRanges& ranges, std::size_t n, std::uint64_t seed, const fs::path& out_dir,
                                 const SimOptions& opts) {
    const std::vector<StereoSample> samples = generate_samples(rig, rows, domain, ranges, n, seed, opts);
    return save_dataset(out_dir, rig, rows, domain.name, seed, samples);
}

std::string dataset_hash(const fs::path& dir) {
    const Dataset ds = load_dataset(dir);
    Sha256 h;
    hash_file_into(h, dir / kManifestName);
    for (const SampleRecord& r : ds.manifest().samples) {
        hash_file_into(h, dir / r.left_path);
        hash_file_into(h, dir / r.right_path);
    }
    return h.hex();
}

// --- model artifacts ------------------------------------------------------

void save_model(const fs::path& path, const Model& params, const Provenance& prov) {
    const auto info = params.arch.layout();
    if (params.tensors.size() != info.size())
        throw Error(ErrorCode::ShapeMismatch, "parameter list does not match the architecture");

    Json tensors = Json::array();
    Json groups = Json::object();
    for (int g = 0; g < kNumGroups; ++g) groups[group_name(static_cast<ParamGroup>(g))] = Json::array();
    std::string payload;
    std::size_t grouped = 0;
    for (std::size_t i = 0; i < info.size(); ++i) {
        if (params.tensors[i].size() != info[i].numel())
            throw Error(ErrorCode::ShapeMismatch, "tensor " + info[i].name + " has the wrong size");
        tensors.push_back({{"name", info[i].name},
                           {"shape", info[i].shape},
                           {"group", group_name(info[i].group)},
                           {"buffer", info[i].buffer},
                           {"offset", payload.size()}});
        groups[group_name(info[i].group)].push_back(info[i].name);
        ++grouped;
        payload.append(reinterpret_cast<const char*>(params.tensors[i].data()),
                       params.tensors[i].size() * sizeof(float));
    }
    if (grouped != info.size()) throw Error(ErrorCode::ShapeMismatch, "group index does not cover every tensor");

    Json frozen = Json::object();
    for (int g = 0; g < kNumGroups; ++g) frozen[group_name(static_cast<ParamGroup>(g))] = params.frozen[g];
    const Json header = {{"architecture", params.arch},
                         {"tensors", tensors},
                         {"groups", groups},
                         {"frozen", frozen},
                         {"provenance",
                          {{"stage", prov.stage},
                           {"seed", prov.seed},
                           {"config_hash", prov.config_hash},
                           {"parent_hash", prov.parent_hash},
                           {"adaptation_ids", prov.adaptation_ids}}},
                         {"dtype", "float32-le"},
                         {"payload_bytes", payload.size()},
                         {"payload_sha256", sha256_hex(payload)}};
    write_atomically(path, std::string(kModelVersion) + "\n" + header.dump() + "\n" + payload);
}

ModelArtifact load_model(const fs::path& path) {
    const std::string bytes = read_text(path);
    const std::string where = path.string();
    const std::size_t nl1 = bytes.find('\n');
    const std::string tag = bytes.substr(0, nl1);
    if (tag != kModelVersion)
        throw Error(ErrorCode::VersionMismatch,
                    where + ": version tag '" + tag.substr(0, 64) + "', expected '" + kModelVersion + "'");
    const std::size_t nl2 = bytes.find('\n', nl1 + 1);
    if (nl2 == std::string::npos) throw Error(ErrorCode::SchemaViolation, where + ": truncated header");
    const Json header = parse_json(bytes.substr(nl1 + 1, nl2 - nl1 - 1), where + " header");
    if (!header.is_object()) throw Error(ErrorCode::SchemaViolation, where + ": header is not an object");

    ModelArtifact art;
    art.params.arch = field<Architecture>(header, "architecture", where);
    if (field<std::string>(header, "dtype", where) != "float32-le")
        throw Error(ErrorCode::SchemaViolation, where + ": field 'dtype' must be float32-le");
    const auto payload_bytes = field<std::size_t>(header, "payload_bytes", where);
    const std::size_t start = nl2 + 1;
    if (bytes.size() - start != payload_bytes)
        throw Error(ErrorCode::SchemaViolation, where + ": payload is " + std::to_string(bytes.size() - start) +
                                                    " bytes, header declares " + std::to_string(payload_bytes));
    const std::string_view payload(bytes.data() + start, payload_bytes);
    if (sha256_hex(payload) != field<std::string>(header, "payload_sha256", where))
        throw Error(ErrorCode::SchemaViolation, where + ": payload digest mismatch");

    const auto info = art.params.arch.layout();
    const Json tensors = field<Json>(header, "tensors", where);
    if (!tensors.is_array() || tensors.size() != info.size())
        throw Error(ErrorCode::ShapeMismatch, where + ": tensor table does not match the architecture");
    art.params.tensors.resize(info.size());
    for (std::size_t i = 0; i < info.size(); ++i) {
        const std::string w = where + ": tensors[" + std::to_string(i) + "]";
        const auto name = field<std::string>(tensors[i], "name", w);
        const auto shape = field<std::vector<int>>(tensors[i], "shape", w);
        const auto group = field<std::string>(tensors[i], "group", w);
        const auto offset = field<std::size_t>(tensors[i], "offset", w);
        if (name != info[i].name || shape != info[i].shape)
            throw Error(ErrorCode::ShapeMismatch, w + ": expected " + info[i].name + " with the architecture's shape");
        if (group != group_name(info[i].group))
            throw Error(ErrorCode::SchemaViolation, w + ": tensor " + name + " is in the wrong group");
        const std::size_t nbytes = info[i].numel() * sizeof(float);
        if (offset + nbytes > payload.size()) throw Error(ErrorCode::ShapeMismatch, w + ": tensor exceeds payload");
        art.params.tensors[i].resize(info[i].numel());
        std::memcpy(art.params.tensors[i].data(), payload.data() + offset, nbytes);
    }

    const Json groups = field<Json>(header, "groups", where);
    std::size_t covered = 0;
    for (int g = 0; g < kNumGroups; ++g) {
        const char* gname = group_name(static_cast<ParamGroup>(g));
        covered += field<std::vector<std::string>>(groups, gname, where + ": groups").size();
    }
    if (covered != info.size()) throw Error(ErrorCode::SchemaViolation, where + ": group index is incomplete");
    const Json frozen = field<Json>(header, "frozen", where);
    for (int g = 0; g < kNumGroups; ++g)
        art.params.frozen[g] = field<bool>(frozen, group_name(static_cast<ParamGroup>(g)), where + ": frozen");

    const Json prov = field<Json>(header, "provenance", where);
    const std::string pw = where + ": provenance";
    art.provenance.stage = field<std::string>(prov, "stage", pw);
    art.provenance.seed = field<std::uint64_t>(prov, "seed", pw);
    art.provenance.config_hash = field<std::string>(prov, "config_hash", pw);
    art.provenance.parent_hash = field<std::string>(prov, "parent_hash", pw);
    art.provenance.adaptation_ids = field<std::vector<std::string>>(prov, "adaptation_ids", pw);
    return art;
}

}  // namespace cropadapt
