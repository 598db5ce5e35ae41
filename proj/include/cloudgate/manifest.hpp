#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cloudgate/ingest.hpp"
#include "cloudgate/verdict.hpp"

namespace cloudgate {

enum class Split { Train, Val, Test };
enum class DatasetKind { CloudSEN12, SPARCS, Custom };

std::string_view to_string(Split split);
std::string_view to_string(DatasetKind dataset);
Split split_from_string(std::string_view s);
DatasetKind dataset_from_string(std::string_view s);

/// One JSON-lines record:
///   {"id": "...", "dataset": "CloudSEN12"|"SPARCS"|"custom",
///    "split": "train"|"val"|"test", "label": "cloudy"|"clear"|null,
///    "sensor": "Sentinel2"|"Landsat8" (optional),
///    "bands": {"B4": "path", ...}, "mask": "path" (optional)}
/// Relative paths resolve against the manifest's directory.
struct ManifestRecord {
  std::string id;
  DatasetKind dataset = DatasetKind::Custom;
  Split split = Split::Test;
  std::optional<Label> label;
  Sensor sensor = Sensor::Sentinel2;
  std::map<std::string, std::filesystem::path> bands;
  std::optional<std::filesystem::path> mask;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> in_split(Split split) const;
};

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Cloud mask convention for a dataset (custom datasets use CloudSEN12's).
MaskScheme mask_scheme_for(DatasetKind dataset);

/// Reads the requested bands (all when empty) onto one grid. The label is
/// the record's, else derived from the mask, else Unknown.
Scene load_scene(const ManifestRecord& record, const std::vector<std::string>& bands = {},
                 const LabelThresholds& thresholds = {});

/// Scene label without reading any band rasters.
SceneLabel scene_label(const ManifestRecord& record, const LabelThresholds& thresholds = {});

/// Checks that every listed file opens and every modality's bands exist.
struct ValidationIssue {
  std::string scene_id;
  std::string message;
};
std::vector<ValidationIssue> validate_manifest(const DatasetManifest& manifest,
                                               const std::vector<Modality>& modalities);

}  // namespace cloudgate
