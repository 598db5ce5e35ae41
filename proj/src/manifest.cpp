#include "cloudgate/manifest.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "cloudgate/error.hpp"

namespace cloudgate {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::string_view to_string(DatasetKind dataset) {
  switch (dataset) {
    case DatasetKind::CloudSEN12: return "CloudSEN12";
    case DatasetKind::SPARCS: return "SPARCS";
    case DatasetKind::Custom: return "custom";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(Errc::ManifestParseError, "unknown split '" + std::string(s) + "'");
}

DatasetKind dataset_from_string(std::string_view s) {
  if (s == "CloudSEN12") return DatasetKind::CloudSEN12;
  if (s == "SPARCS") return DatasetKind::SPARCS;
  if (s == "custom") return DatasetKind::Custom;
  throw Error(Errc::ManifestParseError, "unknown dataset '" + std::string(s) + "'");
}

std::vector<const ManifestRecord*> DatasetManifest::in_split(Split split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

namespace {

ManifestRecord parse_record(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(Errc::ManifestParseError, "record is not a JSON object");
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  if (r.id.empty()) throw Error(Errc::ManifestParseError, "empty scene id");
  r.dataset = dataset_from_string(j.at("dataset").get<std::string>());
  r.split = split_from_string(j.at("split").get<std::string>());
  if (j.contains("label") && !j.at("label").is_null()) {
    const auto s = j.at("label").get<std::string>();
    if (s == "cloudy") r.label = Label::Cloudy;
    else if (s == "clear") r.label = Label::Clear;
    else throw Error(Errc::ManifestParseError, r.id + ": label must be cloudy, clear or null");
  }
  if (j.contains("sensor")) r.sensor = sensor_from_string(j.at("sensor").get<std::string>());
  else r.sensor = r.dataset == DatasetKind::SPARCS ? Sensor::Landsat8 : Sensor::Sentinel2;
  const auto& bands = j.at("bands");
  if (!bands.is_object() || bands.empty())
    throw Error(Errc::ManifestParseError, r.id + ": bands must be a non-empty object");
  for (const auto& [name, path] : bands.items())
    r.bands[name] = base_dir / std::filesystem::path(path.get<std::string>());
  if (j.contains("mask") && !j.at("mask").is_null())
    r.mask = base_dir / std::filesystem::path(j.at("mask").get<std::string>());
  return r;
}

}  // namespace

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  std::map<std::string, Split> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestRecord r;
    try {
      r = parse_record(json::parse(line), base_dir);
    } catch (const json::exception& e) {
      throw Error(Errc::ManifestParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = seen.emplace(r.id, r.split);
    if (!inserted) {
      if (it->second != r.split)
        throw Error(Errc::DuplicateSceneAcrossSplits,
                    "scene '" + r.id + "' appears in both " + std::string(to_string(it->second)) +
                        " and " + std::string(to_string(r.split)));
      throw Error(Errc::ManifestParseError, "duplicate scene id '" + r.id + "'");
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw Error(Errc::ManifestParseError, "manifest has no records");
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open manifest " + path.string());
  const std::string text(std::istreambuf_iterator<char>(in), {});
  return parse_manifest(text, path.parent_path());
}

MaskScheme mask_scheme_for(DatasetKind dataset) {
  return dataset == DatasetKind::SPARCS ? MaskScheme::sparcs() : MaskScheme::cloudsen12();
}

SceneLabel scene_label(const ManifestRecord& record, const LabelThresholds& thresholds) {
  if (record.label) return *record.label == Label::Cloudy ? SceneLabel::Cloudy : SceneLabel::Clear;
  if (record.mask)
    return derive_label(read_raster(*record.mask), mask_scheme_for(record.dataset), thresholds);
  return SceneLabel::Unknown;
}

Scene load_scene(const ManifestRecord& record, const std::vector<std::string>& bands,
                 const LabelThresholds& thresholds) {
  Scene s;
  s.id = record.id;
  s.sensor = record.sensor;
  if (bands.empty()) {
    for (const auto& [name, path] : record.bands) s.bands[name] = read_raster(path);
  } else {
    for (const auto& name : bands) {
      auto it = record.bands.find(name);
      if (it == record.bands.end())
        throw Error(Errc::MissingBand, "scene '" + record.id + "' lists no band " + name);
      s.bands[name] = read_raster(it->second);
    }
  }
  harmonize_bands(s);
  if (record.mask) {
    const double f = cloud_fraction(read_raster(*record.mask), mask_scheme_for(record.dataset));
    s.cloud_fraction = static_cast<float>(f);
  }
  s.label = scene_label(record, thresholds);
  return s;
}

std::vector<ValidationIssue> validate_manifest(const DatasetManifest& manifest,
                                               const std::vector<Modality>& modalities) {
  std::vector<ValidationIssue> issues;
  for (const auto& r : manifest.records) {
    for (auto m : modalities)
      for (const auto& b : modality_bands(m))
        if (!b.empty() && !r.bands.count(b))
          issues.push_back({r.id, "missing band " + b + " for " + std::string(modality_tag(m))});
    for (const auto& [name, path] : r.bands) {
      try {
        read_raster(path);
      } catch (const Error& e) {
        issues.push_back({r.id, "band " + name + ": " + e.what()});
      }
    }
    if (r.mask) {
      try {
        cloud_fraction(read_raster(*r.mask), mask_scheme_for(r.dataset));
      } catch (const Error& e) {
        issues.push_back({r.id, std::string("mask: ") + e.what()});
      }
    }
  }
  return issues;
}

}  // namespace cloudgate
