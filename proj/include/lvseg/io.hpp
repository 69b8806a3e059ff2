#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "lvseg/volume.hpp"

namespace lvseg::io {

namespace fs = std::filesystem;

enum class VoxelType { U8, F32 };

/// Reads a JSON volume header and its raw little-endian payload.
/// Intensities are divided by the header's max_value.
Volume4D read_volume4d(const fs::path& header_path);

/// Writes `<stem>.json` + `<stem>.raw`. F32 payloads round-trip bit-exactly.
void write_volume4d(const Volume4D& vol, const fs::path& header_path,
                    VoxelType type = VoxelType::F32);

/// Parses and validates an annotation, including contour planarity against
/// the slice planes derived from its own axis.
StudyAnnotation parse_annotation(const nlohmann::json& j);
StudyAnnotation read_annotation(const fs::path& path);
nlohmann::json annotation_to_json(const StudyAnnotation& a);
void write_annotation(const StudyAnnotation& a, const fs::path& path);

/// Planarity tolerance used when validating annotation contours, mm.
inline constexpr double kPlanarityTolerance = 1e-6;
void validate_annotation(const StudyAnnotation& a);

void write_mesh(const SurfaceMesh& mesh, const fs::path& path);
SurfaceMesh read_mesh(const fs::path& path);
std::string mesh_to_obj(const SurfaceMesh& mesh);

nlohmann::json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
void write_report(const MetricsReport& r, const fs::path& path);
void write_metrics_csv(const MetricsReport& r, const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace lvseg::io
