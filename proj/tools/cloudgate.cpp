// cloudgate: cloud-presence detection and dataset filtering from the command line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cloudgate/coop.hpp"
#include "cloudgate/error.hpp"
#include "cloudgate/eval.hpp"
#include "cloudgate/manifest.hpp"
#include "cloudgate/pipeline.hpp"
#include "cloudgate/probe.hpp"
#include "cloudgate/toy_model.hpp"
#include "cloudgate/zeroshot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cloudgate;

namespace {

struct SceneOptions {
  std::string manifest;
  std::string modality = "S2/RGB";
  bool with_sar = false;
  std::string split = "all";
  std::string weights;
  std::string embeddings;
  double clear_max = 0.0;
  double cloudy_min = 0.05;

  FeatureSpec spec() const { return FeatureSpec::from_tag(modality + (with_sar ? "+SAR" : "")); }
  LabelThresholds thresholds() const { return {clear_max, cloudy_min}; }
};

void add_manifest(CLI::App* cmd, SceneOptions& o) {
  cmd->add_option("--manifest", o.manifest, "Scene manifest (JSON lines)")->required();
}

void add_features(CLI::App* cmd, SceneOptions& o) {
  cmd->add_option("--modality", o.modality, "Optical modality: S2/RGB, L8/RGB, L8/B6-B4 or S1/SAR")
      ->capture_default_str();
  cmd->add_flag("--with-sar", o.with_sar, "Fuse optical features with the SAR composite");
  cmd->add_option("--embeddings", o.embeddings,
                  "Embedding cache from `embed`; scenes are not re-encoded");
}

void add_split(CLI::App* cmd, SceneOptions& o, const std::string& fallback) {
  o.split = fallback;
  cmd->add_option("--split", o.split, "Manifest split: train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
}

void add_thresholds(CLI::App* cmd, SceneOptions& o) {
  cmd->add_option("--clear-max", o.clear_max, "Mask cloud fraction at or below which a scene is clear")
      ->capture_default_str();
  cmd->add_option("--cloudy-min", o.cloudy_min,
                  "Mask cloud fraction at or above which a scene is cloudy")
      ->capture_default_str();
}

std::vector<const ManifestRecord*> select(const DatasetManifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : m.records) out.push_back(&r);
    return out;
  }
  return m.in_split(split_from_string(split));
}

std::vector<VectorF> scene_features(const std::vector<const ManifestRecord*>& records,
                                    const SceneOptions& o, const TensorArchive* weights) {
  const auto spec = o.spec();
  if (!o.embeddings.empty()) {
    const auto cache = read_embedding_cache(load_archive(o.embeddings, {}), spec);
    std::vector<VectorF> out;
    for (const auto* r : records) {
      auto it = cache.find(r->id);
      if (it == cache.end())
        throw Error(Errc::InvalidArgument, "scene '" + r->id + "' is not in " + o.embeddings);
      out.push_back(it->second);
    }
    return out;
  }
  if (!weights) throw Error(Errc::InvalidArgument, "--weights or --embeddings is required");
  return compute_features(records, SceneEmbedder(*weights), spec, worker_count());
}

std::string trained_on(const std::vector<const ManifestRecord*>& records, const FeatureSpec& spec) {
  std::set<std::string> names;
  for (const auto* r : records) names.insert(std::string(to_string(r->dataset)));
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : "+") + n;
  return out + " " + spec.tag();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

json verdict_json(const std::string& id, const Verdict& v) {
  return {{"scene_id", id},
          {"label", std::string(to_string(v.label))},
          {"score_positive", v.score_positive},
          {"score_negative", v.score_negative},
          {"confidence", v.confidence}};
}

// ---------------------------------------------------------------------------

int cmd_validate(const SceneOptions& o, const std::vector<std::string>& modalities) {
  const auto manifest = load_manifest(o.manifest);
  std::vector<Modality> mods;
  for (const auto& m : modalities) mods.push_back(modality_from_tag(m));
  const auto issues = validate_manifest(manifest, mods);
  for (const auto& i : issues) std::cout << i.scene_id << ": " << i.message << "\n";
  std::cout << manifest.records.size() << " scenes, " << issues.size() << " issues\n";
  return issues.empty() ? 0 : 1;
}

int cmd_embed(const SceneOptions& o, const std::string& out) {
  const auto manifest = load_manifest(o.manifest);
  const auto weights = load_archive(o.weights);
  const auto records = select(manifest, o.split);
  const auto feats = scene_features(records, o, &weights);
  std::vector<std::string> ids;
  for (const auto* r : records) ids.push_back(r->id);
  save_archive(make_embedding_cache(ids, feats, o.spec(), weights.meta("model_id")), out);
  std::cout << "embedded " << ids.size() << " scenes (" << o.spec().tag() << ") -> " << out << "\n";
  return 0;
}

int cmd_zeroshot(const SceneOptions& o, const std::string& vocab, const std::string& pos,
                 const std::string& neg, const std::string& out) {
  const auto manifest = load_manifest(o.manifest);
  const auto weights = load_archive(o.weights);
  const Tokenizer tokenizer(load_vocabulary(vocab));
  const TextEncoder text(weights);
  const auto prompts = make_prompt_pair(text, tokenizer, pos, neg);
  const auto records = select(manifest, o.split);
  const auto feats = scene_features(records, o, &weights);

  json predictions = json::array();
  std::vector<Label> preds, labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto v = classify_zero_shot({feats[i], true}, prompts);
    predictions.push_back(verdict_json(records[i]->id, v));
    const auto truth = scene_label(*records[i], o.thresholds());
    if (truth == SceneLabel::Cloudy || truth == SceneLabel::Clear) {
      preds.push_back(v.label);
      labels.push_back(truth == SceneLabel::Cloudy ? Label::Cloudy : Label::Clear);
    }
  }
  json doc;
  doc["reports"] = json::array();
  if (!preds.empty()) {
    auto r = evaluate_predictions(preds, labels, "text-prompts", std::string(kZeroShot), o.spec().tag(),
                                  {{"model_id", weights.meta("model_id")},
                                   {"prompt.positive", pos},
                                   {"prompt.negative", neg},
                                   {"label.clear_max", std::to_string(o.clear_max)},
                                   {"label.cloudy_min", std::to_string(o.cloudy_min)},
                                   {"split", o.split}});
    doc["reports"] = json::parse(emit_report({r}, ReportFormat::Json))["reports"];
  }
  doc["predictions"] = predictions;
  write_file(out, doc.dump(2) + "\n");
  std::cout << "classified " << records.size() << " scenes, " << preds.size() << " labelled -> "
            << out << "\n";
  return 0;
}

std::vector<LabeledVector> training_examples(const DatasetManifest& manifest, const SceneOptions& o,
                                             const TensorArchive* weights,
                                             std::vector<const ManifestRecord*>& used) {
  used.clear();
  for (const auto* r : select(manifest, o.split)) {
    const auto l = scene_label(*r, o.thresholds());
    if (l == SceneLabel::Cloudy || l == SceneLabel::Clear) used.push_back(r);
  }
  return labeled_examples(used, scene_features(used, o, weights), o.thresholds());
}

int cmd_train_probe(const SceneOptions& o, const TrainConfig& cfg, const std::string& out) {
  std::optional<TensorArchive> weights;
  if (!o.weights.empty()) weights = load_archive(o.weights);
  const auto manifest = load_manifest(o.manifest);
  std::vector<const ManifestRecord*> used;
  const auto data = training_examples(manifest, o, weights ? &*weights : nullptr, used);
  const auto model = train_probe(data, cfg, trained_on(used, o.spec()));
  auto archive = probe_to_archive(model);
  archive.metadata["feature_spec"] = o.spec().tag();
  save_archive(archive, out);
  std::cout << "trained probe on " << data.size() << " scenes (" << model.steps << " steps) -> " << out
            << "\n";
  return 0;
}

int cmd_train_coop(const SceneOptions& o, const std::string& vocab, CoopConfig cfg,
                   const std::array<std::string, 2>& names, const std::string& out) {
  const auto weights = load_archive(o.weights);
  const Tokenizer tokenizer(load_vocabulary(vocab));
  const TextEncoder text(weights);
  const auto manifest = load_manifest(o.manifest);
  std::vector<const ManifestRecord*> used;
  const auto data = training_examples(manifest, o, &weights, used);
  const auto classes = make_class_prompt(tokenizer, names);
  const auto ctx = train_coop(data, cfg, text, classes, logit_scale(weights), trained_on(used, o.spec()));
  auto archive = context_to_archive(ctx);
  archive.metadata["feature_spec"] = o.spec().tag();
  archive.metadata["model_id"] = weights.meta("model_id");
  save_archive(archive, out);
  std::cout << "trained " << ctx.m() << " context vectors on " << data.size() << " scenes -> " << out
            << "\n";
  return 0;
}

int cmd_evaluate(const std::string& weights_path, const std::string& vocab,
                 const std::string& cloudsen12, const std::string& sparcs,
                 const std::vector<std::string>& method_names, const std::vector<std::uint64_t>& seeds,
                 ExperimentSettings settings, const std::string& out) {
  const auto weights = load_archive(weights_path);
  const Tokenizer tokenizer(load_vocabulary(vocab));
  std::optional<DatasetManifest> cs, sp;
  if (!cloudsen12.empty()) cs = load_manifest(cloudsen12);
  if (!sparcs.empty()) sp = load_manifest(sparcs);
  std::vector<Method> methods;
  for (const auto& m : method_names) {
    if (m == "all") {
      methods = all_methods();
      break;
    }
    methods.push_back(method_from_string(m));
  }
  settings.model_id = weights.meta("model_id");
  settings.threads = worker_count();
  const auto reports = run_experiment_matrix({cs ? &*cs : nullptr, sp ? &*sp : nullptr}, methods,
                                             weights, tokenizer, seeds, settings);
  write_file(fs::path(out) / "matrix.json", emit_report(reports, ReportFormat::Json));
  write_file(fs::path(out) / "matrix.md", emit_report(reports, ReportFormat::Markdown));
  int failed = 0;
  for (const auto& r : reports) failed += r.status == CellStatus::Failed;
  std::cout << reports.size() << " cells, " << failed << " failed -> " << out << "\n";
  return 0;
}

int cmd_filter(const SceneOptions& o, const std::string& vocab, const std::string& probe_path,
               const std::string& coop_path, const std::string& pos, const std::string& neg,
               const std::string& mode, float threshold, const std::string& out) {
  if (!probe_path.empty() && !coop_path.empty())
    throw Error(Errc::InvalidArgument, "--probe and --coop are mutually exclusive");
  const auto manifest = load_manifest(o.manifest);
  const auto records = select(manifest, o.split);
  std::optional<TensorArchive> weights;
  if (!o.weights.empty()) weights = load_archive(o.weights);

  std::function<Verdict(const VectorF&)> classify;
  std::optional<ProbeModel> probe;
  std::optional<TextEncoder> text;
  std::optional<CoopClassifier> coop;
  std::optional<PromptPair> prompts;
  if (!probe_path.empty()) {
    probe = probe_from_archive(load_archive(probe_path, {}));
    classify = [&](const VectorF& f) { return predict_probe(*probe, f); };
  } else {
    if (!weights) throw Error(Errc::InvalidArgument, "--weights is required for prompt-based filtering");
    text.emplace(*weights);
    if (!coop_path.empty()) {
      coop.emplace(*text, context_from_archive(load_archive(coop_path, {})));
      classify = [&](const VectorF& f) { return coop->classify({f, true}); };
    } else {
      if (vocab.empty()) throw Error(Errc::InvalidArgument, "--vocab is required for text prompts");
      prompts = make_prompt_pair(*text, Tokenizer(load_vocabulary(vocab)), pos, neg);
      classify = [&](const VectorF& f) { return classify_zero_shot({f, true}, *prompts); };
    }
  }

  const auto feats = scene_features(records, o, weights ? &*weights : nullptr);
  const Label target = mode == "discard-cloudy" ? Label::Cloudy : Label::Clear;
  std::string lines;
  int kept = 0, discarded = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto v = classify(feats[i]);
    const bool discard = v.label == target && v.confidence >= threshold;
    (discard ? discarded : kept) += 1;
    auto j = verdict_json(records[i]->id, v);
    j["action"] = discard ? "discard" : "keep";
    j["threshold"] = threshold;
    lines += j.dump() + "\n";
  }
  write_file(out, lines);
  std::cout << "kept " << kept << ", discarded " << discarded << " (" << mode << ", threshold "
            << threshold << ")\n";
  return 0;
}

int cmd_make_toy(const std::string& weights, const std::string& vocab, std::uint64_t seed) {
  save_archive(make_toy_archive({}, seed), weights);
  save_vocabulary(make_toy_vocabulary(), vocab);
  std::cout << "wrote " << weights << " and " << vocab << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloud-presence detection for satellite image tiles with a frozen vision-language model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cloudgate 0.1.0");

  SceneOptions o;
  std::string out, vocab, pos{kDefaultPositivePrompt}, neg{kDefaultNegativePrompt};
  std::uint64_t seed = 0;
  std::vector<std::string> validate_modalities;

  auto add_vocab = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--vocab", vocab, "Tokenizer vocabulary bundle");
    if (required) opt->required();
  };
  auto add_weights = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--weights", o.weights, "Model weights (CGT1 archive)");
    if (required) opt->required();
  };
  auto add_prompts = [&](CLI::App* cmd) {
    cmd->add_option("--prompts-pos", pos, "Prompt for the cloudy class")->capture_default_str();
    cmd->add_option("--prompts-neg", neg, "Prompt for the clear class")->capture_default_str();
  };
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Seed for every random choice the command makes")->capture_default_str();
  };

  // validate / ingest validate
  auto validate_opts = [&](CLI::App* cmd) {
    add_manifest(cmd, o);
    cmd->add_option("--modality", validate_modalities, "Modalities whose bands must be present (repeatable)");
  };
  auto* validate = app.add_subcommand("validate", "Check that every manifest file opens and bands are complete");
  validate_opts(validate);
  auto* ingest = app.add_subcommand("ingest", "Dataset ingestion commands");
  ingest->require_subcommand(1);
  auto* ingest_validate = ingest->add_subcommand("validate", "Same as `validate`");
  validate_opts(ingest_validate);

  auto* embed = app.add_subcommand("embed", "Encode scenes once and cache their features");
  add_manifest(embed, o);
  add_weights(embed, true);
  add_features(embed, o);
  add_split(embed, o, "all");
  embed->add_option("--out", out, "Cache archive to write")->required();

  auto* zeroshot = app.add_subcommand("zeroshot", "Classify scenes with the two text prompts");
  add_manifest(zeroshot, o);
  add_weights(zeroshot, true);
  add_vocab(zeroshot, true);
  add_prompts(zeroshot);
  add_features(zeroshot, o);
  add_split(zeroshot, o, "all");
  add_thresholds(zeroshot, o);
  zeroshot->add_option("--out", out, "Report JSON to write")->required();

  TrainConfig probe_cfg;
  auto* train_probe_cmd = app.add_subcommand("train-probe", "Fit a linear probe on frozen image features");
  add_manifest(train_probe_cmd, o);
  add_weights(train_probe_cmd, false);
  add_features(train_probe_cmd, o);
  add_split(train_probe_cmd, o, "train");
  add_thresholds(train_probe_cmd, o);
  add_seed(train_probe_cmd);
  train_probe_cmd->add_option("--steps", probe_cfg.steps, "Optimizer steps")->capture_default_str();
  train_probe_cmd->add_option("--batch-size", probe_cfg.batch_size, "Minibatch size")->capture_default_str();
  train_probe_cmd->add_option("--lr", probe_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_probe_cmd->add_option("--out", out, "Probe archive to write")->required();

  CoopConfig coop_cfg;
  std::array<std::string, 2> class_names{"clouds", "clear sky"};
  auto add_coop_flags = [&](CLI::App* cmd, CoopConfig& c, const std::string& prefix) {
    cmd->add_option("--" + prefix + "m-context", c.m_context, "Learned context vectors")->capture_default_str();
    cmd->add_option("--" + prefix + "init-std", c.init_std, "Context initialization std")->capture_default_str();
    cmd->add_option("--" + prefix + "steps", c.steps, "SGD steps")->capture_default_str();
    cmd->add_option("--" + prefix + "batch-size", c.batch_size, "Minibatch size")->capture_default_str();
    cmd->add_option("--" + prefix + "lr", c.learning_rate, "SGD learning rate")->capture_default_str();
  };
  auto* train_coop_cmd = app.add_subcommand("train-coop", "Learn a prompt context for the two classes");
  add_manifest(train_coop_cmd, o);
  add_weights(train_coop_cmd, true);
  add_vocab(train_coop_cmd, true);
  add_features(train_coop_cmd, o);
  add_split(train_coop_cmd, o, "train");
  add_thresholds(train_coop_cmd, o);
  add_seed(train_coop_cmd);
  add_coop_flags(train_coop_cmd, coop_cfg, "");
  train_coop_cmd->add_option("--class-cloudy", class_names[0], "Class name of the cloudy class")
      ->capture_default_str();
  train_coop_cmd->add_option("--class-clear", class_names[1], "Class name of the clear class")
      ->capture_default_str();
  train_coop_cmd->add_option("--out", out, "Context archive to write")->required();

  std::string cloudsen12, sparcs;
  std::vector<std::string> methods{"all"};
  std::vector<std::uint64_t> seeds{0};
  ExperimentSettings settings;
  auto* evaluate = app.add_subcommand("evaluate", "Run the cross-sensor experiment matrix");
  add_weights(evaluate, true);
  add_vocab(evaluate, true);
  evaluate->add_option("--cloudsen12", cloudsen12, "CloudSEN12 manifest");
  evaluate->add_option("--sparcs", sparcs, "SPARCS manifest");
  evaluate->add_option("--methods", methods, "all, or any of text-prompts,linear-probe,coop,radar")
      ->delimiter(',')
      ->capture_default_str();
  evaluate->add_option("--seeds", seeds, "Comma-separated training seeds")->delimiter(',')->capture_default_str();
  evaluate->add_option("--prompts-pos", settings.positive_prompt, "Prompt for the cloudy class")
      ->capture_default_str();
  evaluate->add_option("--prompts-neg", settings.negative_prompt, "Prompt for the clear class")
      ->capture_default_str();
  evaluate->add_option("--probe-steps", settings.probe.steps, "Linear probe steps")->capture_default_str();
  evaluate->add_option("--probe-batch-size", settings.probe.batch_size, "Linear probe batch size")
      ->capture_default_str();
  evaluate->add_option("--probe-lr", settings.probe.learning_rate, "Linear probe learning rate")
      ->capture_default_str();
  add_coop_flags(evaluate, settings.coop, "coop-");
  evaluate->add_option("--clear-max", settings.thresholds.clear_max, "Mask cloud fraction at or below which a scene is clear")
      ->capture_default_str();
  evaluate->add_option("--cloudy-min", settings.thresholds.cloudy_min,
                       "Mask cloud fraction at or above which a scene is cloudy")
      ->capture_default_str();
  evaluate->add_option("--out", out, "Directory for matrix.json and matrix.md")->required();

  std::string probe_path, coop_path, mode = "discard-cloudy";
  float threshold = 0.5f;
  auto* filter = app.add_subcommand("filter", "Decide which scenes to keep based on cloud presence");
  add_manifest(filter, o);
  add_weights(filter, false);
  add_vocab(filter, false);
  add_features(filter, o);
  add_split(filter, o, "all");
  add_prompts(filter);
  filter->add_option("--probe", probe_path, "Classify with a trained probe");
  filter->add_option("--coop", coop_path, "Classify with a trained CoOp context");
  filter->add_option("--mode", mode, "discard-cloudy or discard-clear")
      ->check(CLI::IsMember({"discard-cloudy", "discard-clear"}))
      ->capture_default_str();
  filter->add_option("--threshold", threshold, "Minimum confidence for a discard")->capture_default_str();
  filter->add_option("--out", out, "Decision list (JSON lines) to write")->required();

  std::string toy_weights, toy_vocab;
  auto* make_toy = app.add_subcommand("make-toy", "Write small random weights and a byte-level vocabulary for smoke tests");
  make_toy->add_option("--weights", toy_weights, "Weights archive to write")->required();
  make_toy->add_option("--vocab", toy_vocab, "Vocabulary bundle to write")->required();
  add_seed(make_toy);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate || *ingest_validate) return cmd_validate(o, validate_modalities);
    if (*embed) return cmd_embed(o, out);
    if (*zeroshot) return cmd_zeroshot(o, vocab, pos, neg, out);
    if (*train_probe_cmd) {
      probe_cfg.seed = seed;
      return cmd_train_probe(o, probe_cfg, out);
    }
    if (*train_coop_cmd) {
      coop_cfg.seed = seed;
      return cmd_train_coop(o, vocab, coop_cfg, class_names, out);
    }
    if (*evaluate) return cmd_evaluate(o.weights, vocab, cloudsen12, sparcs, methods, seeds, settings, out);
    if (*filter) return cmd_filter(o, vocab, probe_path, coop_path, pos, neg, mode, threshold, out);
    if (*make_toy) return cmd_make_toy(toy_weights, toy_vocab, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
