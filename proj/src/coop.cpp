#include "cloudgate/coop.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "cloudgate/error.hpp"
#include "cloudgate/zeroshot.hpp"

namespace cloudgate {

namespace {

void check_fits(int m, const ClassPrompt& classes) {
  if (m < 0) throw Error(Errc::InvalidArgument, "negative context length");
  for (int c = 0; c < 2; ++c)
    if (m + static_cast<int>(classes.token_ids[c].size()) + 2 > kContextLength)
      throw Error(Errc::ContextTooLong, std::to_string(m) + " context tokens plus class '" +
                                            classes.names[c] + "' exceed " +
                                            std::to_string(kContextLength));
}

std::string float_text(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

ClassPrompt make_class_prompt(const Tokenizer& tokenizer, std::array<std::string, 2> names) {
  ClassPrompt p;
  p.names = std::move(names);
  for (int c = 0; c < 2; ++c) p.token_ids[c] = tokenizer.encode(p.names[c]);
  p.sot_id = tokenizer.vocabulary().sot_id;
  p.eot_id = tokenizer.vocabulary().eot_id;
  return p;
}

ContextVectors init_context(const CoopConfig& config, const ClassPrompt& classes, int width) {
  if (config.m_context < 1) throw Error(Errc::InvalidArgument, "m_context must be >= 1");
  check_fits(config.m_context, classes);
  ContextVectors ctx;
  ctx.classes = classes;
  ctx.rows.resize(config.m_context, width);
  std::mt19937_64 rng(config.seed);
  if (config.init_std > 0.0f) {
    std::normal_distribution<float> dist(0.0f, config.init_std);
    for (Eigen::Index i = 0; i < ctx.rows.size(); ++i) ctx.rows.data()[i] = dist(rng);
  } else {
    ctx.rows.setZero();
  }
  ctx.seed = config.seed;
  ctx.init_std = config.init_std;
  return ctx;
}

template <typename T>
Matrix<T> coop_prompt_rows(const TextEncoder& encoder, const Matrix<T>& ctx,
                           const ClassPrompt& classes, int class_index, int* eot_position) {
  if (class_index != 0 && class_index != 1)
    throw Error(Errc::InvalidArgument, "class index must be 0 or 1");
  const int m = static_cast<int>(ctx.rows());
  check_fits(m, classes);
  if (ctx.cols() != encoder.width())
    throw Error(Errc::ShapeMismatch, "context width does not match the text encoder");

  TokenSequence tokens;
  tokens.ids[0] = classes.sot_id;
  int pos = 1 + m;
  for (int id : classes.token_ids[class_index]) tokens.ids[pos++] = id;
  tokens.ids[pos] = classes.eot_id;
  tokens.length = pos + 1;

  Matrix<T> rows = encoder.embed_tokens(tokens).template cast<T>();
  if (m > 0) rows.middleRows(1, m) = ctx;
  if (eot_position) *eot_position = pos;
  return rows;
}

template Matrix<float> coop_prompt_rows<float>(const TextEncoder&, const Matrix<float>&,
                                               const ClassPrompt&, int, int*);
template Matrix<double> coop_prompt_rows<double>(const TextEncoder&, const Matrix<double>&,
                                                 const ClassPrompt&, int, int*);

Embedding coop_class_embedding(const TextEncoder& encoder, const ContextVectors& ctx,
                               int class_index) {
  int eot = 0;
  const MatrixF rows = coop_prompt_rows<float>(encoder, ctx.rows, ctx.classes, class_index, &eot);
  return encoder.encode_from_embeddings(rows, eot);
}

template <typename T>
CoopObjective<T> coop_objective(const TextEncoder& encoder, const Matrix<T>& ctx,
                                const ClassPrompt& classes, const Matrix<T>& images,
                                std::span<const int> labels, std::span<const std::size_t> batch,
                                T scale, bool with_gradient) {
  std::array<Matrix<T>, 2> rows;
  std::array<int, 2> eot{};
  std::array<Vector<T>, 2> class_emb;
  for (int c = 0; c < 2; ++c) {
    rows[c] = coop_prompt_rows<T>(encoder, ctx, classes, c, &eot[c]);
    class_emb[c] = encoder.forward<T>(rows[c], eot[c]);
  }

  CoopObjective<T> out;
  std::array<Vector<T>, 2> grad_emb{Vector<T>::Zero(class_emb[0].size()),
                                    Vector<T>::Zero(class_emb[1].size())};
  const T n = static_cast<T>(batch.size());
  for (auto i : batch) {
    const Vector<T> img = images.row(static_cast<Eigen::Index>(i)).transpose();
    const T l0 = scale * img.dot(class_emb[0]);
    const T l1 = scale * img.dot(class_emb[1]);
    const T mx = std::max(l0, l1);
    const T lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
    const int target = labels[i] == 1 ? 0 : 1;
    out.loss += (lse - (target == 0 ? l0 : l1)) / n;
    const T p0 = std::exp(l0 - lse);
    const T p1 = std::exp(l1 - lse);
    grad_emb[0] += (p0 - (target == 0 ? T(1) : T(0))) * scale / n * img;
    grad_emb[1] += (p1 - (target == 1 ? T(1) : T(0))) * scale / n * img;
  }

  if (with_gradient) {
    const int m = static_cast<int>(ctx.rows());
    out.grad_context = Matrix<T>::Zero(m, ctx.cols());
    for (int c = 0; c < 2; ++c) {
      const Matrix<T> g = encoder.backward<T>(rows[c], eot[c], grad_emb[c]);
      if (m > 0) out.grad_context += g.middleRows(1, m);
    }
  }
  return out;
}

template CoopObjective<float> coop_objective<float>(const TextEncoder&, const Matrix<float>&,
                                                    const ClassPrompt&, const Matrix<float>&,
                                                    std::span<const int>,
                                                    std::span<const std::size_t>, float, bool);
template CoopObjective<double> coop_objective<double>(const TextEncoder&, const Matrix<double>&,
                                                      const ClassPrompt&, const Matrix<double>&,
                                                      std::span<const int>,
                                                      std::span<const std::size_t>, double, bool);

ContextVectors train_coop(std::span<const LabeledVector> embeddings, const CoopConfig& config,
                          const TextEncoder& encoder, const ClassPrompt& classes, float scale,
                          std::string trained_on, const StepObserver& observer) {
  const int dim = check_training_set(embeddings);
  if (dim != encoder.config().embed_dim)
    throw Error(Errc::DimensionMismatch, "image embeddings do not match the text embedding size");
  if (config.steps < 0 || config.batch_size <= 0)
    throw Error(Errc::InvalidArgument, "steps must be >= 0 and batch_size > 0");

  ContextVectors ctx = init_context(config, classes, encoder.width());
  MatrixF images(static_cast<Eigen::Index>(embeddings.size()), dim);
  std::vector<int> labels(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    images.row(static_cast<Eigen::Index>(i)) = embeddings[i].features.transpose();
    labels[i] = embeddings[i].label;
  }

  EpochSampler sampler(embeddings.size(), config.seed);
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = sampler.next_batch(config.batch_size);
    const auto obj = coop_objective<float>(encoder, ctx.rows, classes, images, labels, batch, scale);
    if (observer) observer(step, obj.loss);
    ctx.rows -= config.learning_rate * obj.grad_context;
  }
  if (!ctx.rows.allFinite()) throw Error(Errc::InvalidArgument, "CoOp training diverged");

  ctx.steps = config.steps;
  ctx.batch_size = config.batch_size;
  ctx.learning_rate = config.learning_rate;
  ctx.trained_on = std::move(trained_on);
  return ctx;
}

CoopClassifier::CoopClassifier(const TextEncoder& encoder, const ContextVectors& ctx)
    : class_embs_{coop_class_embedding(encoder, ctx, 0), coop_class_embedding(encoder, ctx, 1)} {}

Verdict CoopClassifier::classify(const Embedding& image_emb) const {
  return verdict_from_scores(similarity(image_emb, class_embs_[0]),
                             similarity(image_emb, class_embs_[1]));
}

Verdict classify_coop(const Embedding& image_emb, const ContextVectors& ctx,
                      const TextEncoder& encoder) {
  return CoopClassifier(encoder, ctx).classify(image_emb);
}

TensorArchive context_to_archive(const ContextVectors& ctx) {
  if (ctx.m() < 1) throw Error(Errc::InvalidArgument, "cannot store an empty context");
  TensorArchive a;
  const auto m = static_cast<std::uint64_t>(ctx.rows.rows());
  const auto w = static_cast<std::uint64_t>(ctx.rows.cols());
  a.entries["coop.context"] =
      Tensor({m, w}, std::vector<float>(ctx.rows.data(), ctx.rows.data() + ctx.rows.size()));
  for (int c = 0; c < 2; ++c) {
    const auto& ids = ctx.classes.token_ids[c];
    if (ids.empty()) continue;
    a.entries["coop.class_tokens." + std::to_string(c)] =
        Tensor({ids.size()}, std::vector<float>(ids.begin(), ids.end()));
  }
  a.metadata["class_name.0"] = ctx.classes.names[0];
  a.metadata["class_name.1"] = ctx.classes.names[1];
  a.metadata["sot_id"] = std::to_string(ctx.classes.sot_id);
  a.metadata["eot_id"] = std::to_string(ctx.classes.eot_id);
  a.metadata["class_token_position"] = "end";
  a.metadata["seed"] = std::to_string(ctx.seed);
  a.metadata["steps"] = std::to_string(ctx.steps);
  a.metadata["batch_size"] = std::to_string(ctx.batch_size);
  a.metadata["learning_rate"] = float_text(ctx.learning_rate);
  a.metadata["init_std"] = float_text(ctx.init_std);
  a.metadata["optimizer"] = "sgd";
  a.metadata["trained_on"] = ctx.trained_on;
  a.metadata["canonical"] = ctx.steps == 1000 && ctx.batch_size == 10 ? "true" : "false";
  return a;
}

ContextVectors context_from_archive(const TensorArchive& a) {
  ContextVectors ctx;
  const auto& t = a.at("coop.context");
  if (t.rank() != 2) throw Error(Errc::ShapeMismatch, "coop.context must be rank 2");
  ctx.rows = Eigen::Map<const MatrixF>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                                       static_cast<Eigen::Index>(t.dim(1)));
  for (int c = 0; c < 2; ++c) {
    ctx.classes.names[c] = a.meta("class_name." + std::to_string(c));
    const std::string key = "coop.class_tokens." + std::to_string(c);
    if (a.contains(key))
      for (float v : a.at(key).data()) ctx.classes.token_ids[c].push_back(static_cast<int>(v));
  }
  ctx.classes.sot_id = static_cast<int>(a.meta_int("sot_id"));
  ctx.classes.eot_id = static_cast<int>(a.meta_int("eot_id"));
  ctx.seed = static_cast<std::uint64_t>(a.meta_int("seed"));
  ctx.steps = static_cast<int>(a.meta_int("steps"));
  ctx.batch_size = static_cast<int>(a.meta_int("batch_size", 0));
  if (a.metadata.count("learning_rate")) ctx.learning_rate = std::stof(a.meta("learning_rate"));
  if (a.metadata.count("init_std")) ctx.init_std = std::stof(a.meta("init_std"));
  if (a.metadata.count("trained_on")) ctx.trained_on = a.meta("trained_on");
  return ctx;
}

}  // namespace cloudgate
