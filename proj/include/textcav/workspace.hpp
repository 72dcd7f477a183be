#pragma once

// Directory layout of a workspace, shared by the CLI, the service and the
// synthetic exporter:
//
//   target_image.fmx   (+ .meta.json)
//   vl_image.fmx       (+ .meta.json)
//   vl_text.fmx        (+ .meta.json, optional)
//   heads/<id>.fmx     (+ .meta.json)
//   concepts.jsonl
//   annotations.jsonl  (optional)
//   maps/<id>/{h,g}.{weights,bias}.fmx, report.json
//   jobs/<id>.json

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "textcav/concept_pipeline.hpp"
#include "textcav/feature_store.hpp"
#include "textcav/trainer.hpp"

namespace textcav {

struct WorkspaceLayout {
  std::filesystem::path root;

  std::filesystem::path target_image() const { return root / "target_image.fmx"; }
  std::filesystem::path vl_image() const { return root / "vl_image.fmx"; }
  std::filesystem::path vl_text() const { return root / "vl_text.fmx"; }
  std::filesystem::path heads_dir() const { return root / "heads"; }
  std::filesystem::path head(const std::string& id) const { return heads_dir() / (id + ".fmx"); }
  std::filesystem::path concepts() const { return root / "concepts.jsonl"; }
  std::filesystem::path annotations() const { return root / "annotations.jsonl"; }
  std::filesystem::path maps_dir() const { return root / "maps"; }
  std::filesystem::path map(const std::string& id) const { return maps_dir() / id; }
  std::filesystem::path jobs_dir() const { return root / "jobs"; }

  bool looks_like_workspace() const;
};

struct MapCheckpoint {
  std::string id;
  AffineMap h;
  AffineMap g;
  nlohmann::json report;
};

void save_map_checkpoint(const std::filesystem::path& dir, const AffineMap& h, const AffineMap& g,
                         const nlohmann::json& report);
MapCheckpoint load_map_checkpoint(const std::filesystem::path& dir);

/// Stem of a path ("heads/clean.fmx" -> "clean", "maps/map-1/" -> "map-1").
std::string artifact_id(const std::filesystem::path& p);

struct Workspace {
  std::string id;
  std::filesystem::path root;
  FeatureSet target_image;
  FeatureSet vl_image;
  std::optional<FeatureSet> vl_text;
  std::map<std::string, ClassifierHead> heads;
  ConceptList concepts;
  std::optional<AnnotationSet> annotations;
  std::map<std::string, MapCheckpoint> maps;

  TrainingData training_data() const;
};

/// Loads and cross-validates every artifact under `root`.
Workspace load_workspace(const std::filesystem::path& root, const std::string& id);

}  // namespace textcav
