#pragma once

#include "cropadapt/geometry.hpp"
#include "cropadapt/net.hpp"
#include "cropadapt/sim.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cropadapt {

inline constexpr const char* kDatasetVersion = "cropadapt-dataset/1";
inline constexpr const char* kModelVersion = "cropadapt-model/1";
inline constexpr const char* kManifestName = "manifest.jsonl";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Hex digest of the rig's canonical JSON form.
std::string rig_hash(const CameraRig& rig);

struct SampleRecord {
    std::string id;
    std::string left_path;   // relative to the dataset root
    std::string right_path;
    double imu_roll = 0.0;
    Pose true_pose;
    KeypointTriple gt_left;
    KeypointTriple gt_right;
};

struct DatasetManifest {
    std::string version = kDatasetVersion;
    CameraRig rig;
    RowGeometry rows;
    std::string domain;
    std::uint64_t seed = 0;
    std::string rig_hash;
    std::vector<SampleRecord> samples;
};

// A validated dataset on disk. Images are read on demand.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::filesystem::path root, DatasetManifest manifest);

    const DatasetManifest& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }
    std::size_t size() const { return manifest_.samples.size(); }

    StereoSample load(std::size_t index) const;
    std::vector<StereoSample> load_all() const;
    std::vector<std::string> ids() const;

private:
    std::filesystem::path root_;
    DatasetManifest manifest_;
};

// Writes manifest.jsonl plus left/<id>.png and right/<id>.png under `dir`.
DatasetManifest save_dataset(const std::filesystem::path& dir, const CameraRig& rig, const RowGeometry& rows,
                             const std::string& domain, std::uint64_t seed, std::span<const StereoSample> samples);

// Checks the version tag, every record's fields, file presence and that each
// image matches the rig dimensions.
Dataset load_dataset(const std::filesystem::path& dir);

// Renders and persists n samples; sample i depends only on (inputs, seed, i).
DatasetManifest generate_dataset(const CameraRig& rig, const RowGeometry& rows, const DomainAppearance& domain,
                                 const PoseRanges& ranges, std::size_t n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const SimOptions& opts = {});

// Digest over the manifest and every referenced image, in manifest order.
std::string dataset_hash(const std::filesystem::path& dir);

struct Provenance {
    std::string stage;  // "init", "source", "adapted"
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string parent_hash;  // artifact this one was derived from, if any
    std::vector<std::string> adaptation_ids;
};

struct ModelArtifact {
    Model params;
    Provenance provenance;
};

// Single file: one text line naming the version, one JSON header line
// (architecture, tensor table, group index, frozen flags, provenance, payload
// size and digest), then little-endian float32 tensors. Written atomically.
void save_model(const std::filesystem::path& path, const Model& params, const Provenance& provenance);
ModelArtifact load_model(const std::filesystem::path& path);

}  // namespace cropadapt
