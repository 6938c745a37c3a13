#pragma once

// JSON forms of the configuration and record types. Readers merge onto the
// destination's current values, reject unknown keys and report the offending
// field as a SchemaViolation.

#include "cropadapt/adapt.hpp"
#include "cropadapt/geometry.hpp"
#include "cropadapt/net.hpp"
#include "cropadapt/sim.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace cropadapt {

using Json = nlohmann::json;

void to_json(Json& j, const CameraRig& v);
void from_json(const Json& j, CameraRig& v);
void to_json(Json& j, const RowGeometry& v);
void from_json(const Json& j, RowGeometry& v);
void to_json(Json& j, const Pose& v);
void from_json(const Json& j, Pose& v);
void to_json(Json& j, const PixelPoint& v);
void from_json(const Json& j, PixelPoint& v);
void to_json(Json& j, const KeypointTriple& v);
void from_json(const Json& j, KeypointTriple& v);
void to_json(Json& j, const ConstraintTolerances& v);
void from_json(const Json& j, ConstraintTolerances& v);
void to_json(Json& j, const Range& v);
void from_json(const Json& j, Range& v);
void to_json(Json& j, const PoseRanges& v);
void from_json(const Json& j, PoseRanges& v);
void to_json(Json& j, const DomainAppearance& v);
void from_json(const Json& j, DomainAppearance& v);
void to_json(Json& j, const SimOptions& v);
void from_json(const Json& j, SimOptions& v);
void to_json(Json& j, const TrainConfig& v);
void from_json(const Json& j, TrainConfig& v);
void to_json(Json& j, const AdaptConfig& v);
void from_json(const Json& j, AdaptConfig& v);
void to_json(Json& j, const Architecture& v);
void from_json(const Json& j, Architecture& v);

// Parses text; malformed input is a SchemaViolation naming `what`.
Json parse_json(const std::string& text, const std::string& what);
Json read_json_file(const std::filesystem::path& path);

// Domain preset by name, or a preset overridden by a JSON object
// {"preset": name, ...fields}.
DomainAppearance domain_from_json(const Json& j);

// Digest of the compact serialization, used for provenance records.
std::string json_hash(const Json& j);

}  // namespace cropadapt
