#include "cloudgate/encoder.hpp"

#include <cmath>
#include <limits>

#include "cloudgate/error.hpp"

namespace cloudgate {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kNormalizeEps = 1e-12;

Eigen::Map<const MatrixF> mat(const Tensor* t, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const MatrixF>(t->data().data(), rows, cols);
}

Eigen::Map<const VectorF> vec(const Tensor* t) {
  return Eigen::Map<const VectorF>(t->data().data(), static_cast<Eigen::Index>(t->size()));
}

const Tensor* expect(const TensorArchive& archive, const std::string& name,
                     std::vector<std::uint64_t> shape) {
  const Tensor& t = archive.at(name);
  if (t.shape() != shape) {
    // Accept any layout with the same element count for flattened kernels.
    bool flat_ok = name.ends_with("patch_embedding") && t.size() == shape_product(shape);
    if (!flat_ok) throw Error(Errc::ShapeMismatch, name + " has unexpected shape");
  }
  return &t;
}

int count_blocks(const TensorArchive& archive, const std::string& prefix) {
  int n = 0;
  while (archive.contains(prefix + std::to_string(n) + ".ln_1.weight")) ++n;
  return n;
}

template <typename T>
struct LayerNormCache {
  Matrix<T> hat;
  Vector<T> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Tensor* gamma_t, const Tensor* beta_t,
                     LayerNormCache<T>* cache) {
  const Vector<T> gamma = vec(gamma_t).template cast<T>();
  const Vector<T> beta = vec(beta_t).template cast<T>();
  const Vector<T> mean = x.rowwise().mean();
  Matrix<T> centered = x.colwise() - mean;
  const Vector<T> var = centered.array().square().rowwise().mean();
  const Vector<T> rstd = (var.array() + T(kLayerNormEps)).rsqrt();
  Matrix<T> hat = centered.array().colwise() * rstd.array();
  Matrix<T> y = (hat.array().rowwise() * gamma.transpose().array()).rowwise() +
                beta.transpose().array();
  if (cache) {
    cache->hat = std::move(hat);
    cache->rstd = rstd;
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Tensor* gamma_t,
                              const LayerNormCache<T>& cache) {
  const Vector<T> gamma = vec(gamma_t).template cast<T>();
  const Matrix<T> dhat = dy.array().rowwise() * gamma.transpose().array();
  const Vector<T> mean_dhat = dhat.rowwise().mean();
  const Vector<T> mean_dhat_hat = (dhat.array() * cache.hat.array()).rowwise().mean();
  Matrix<T> dx = dhat.colwise() - mean_dhat;
  dx -= (cache.hat.array().colwise() * mean_dhat_hat.array()).matrix();
  return dx.array().colwise() * cache.rstd.array();
}

template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Tensor* w, const Tensor* b) {
  const auto out = static_cast<Eigen::Index>(w->dim(0));
  const auto in = static_cast<Eigen::Index>(w->dim(1));
  Matrix<T> y = x * mat(w, out, in).template cast<T>().transpose();
  y.rowwise() += vec(b).template cast<T>().transpose();
  return y;
}

// Gradient of linear() with respect to its input.
template <typename T>
Matrix<T> linear_backward(const Matrix<T>& dy, const Tensor* w) {
  const auto out = static_cast<Eigen::Index>(w->dim(0));
  const auto in = static_cast<Eigen::Index>(w->dim(1));
  return dy * mat(w, out, in).template cast<T>();
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Matrix<T> activate(const Matrix<T>& f, Activation act) {
  if (act == Activation::QuickGelu)
    return f.unaryExpr([](T v) { return v * sigmoid(T(1.702) * v); });
  return f.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2)))); });
}

template <typename T>
Matrix<T> activate_grad(const Matrix<T>& f, Activation act) {
  if (act == Activation::QuickGelu)
    return f.unaryExpr([](T v) {
      const T s = sigmoid(T(1.702) * v);
      return s + T(1.702) * v * s * (T(1) - s);
    });
  return f.unaryExpr([](T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2))));
    const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * T(M_PI));
    return cdf + v * pdf;
  });
}

template <typename T>
Vector<T> normalize(const Vector<T>& z, T* norm_out = nullptr) {
  const T norm = std::max(z.norm(), T(kNormalizeEps));
  if (norm_out) *norm_out = norm;
  return z / norm;
}

Embedding to_embedding(const VectorF& v) { return Embedding{v, true}; }

}  // namespace

template <typename T>
struct BlockCache {
  LayerNormCache<T> ln1;
  LayerNormCache<T> ln2;
  Matrix<T> qkv;
  Matrix<T> attn;
  std::vector<Matrix<T>> probs;
  Matrix<T> f;
  Matrix<T> g;
};

struct BlockMath {
  template <typename T>
  static Matrix<T> forward(const TextEncoder::Block& b, const Matrix<T>& x, int heads, bool causal,
                           Activation act, BlockCache<T>* cache) {
    const Eigen::Index L = x.rows();
    const Eigen::Index w = x.cols();
    const Eigen::Index d = w / heads;
    const T scale = T(1) / std::sqrt(T(d));

    LayerNormCache<T>* ln1 = cache ? &cache->ln1 : nullptr;
    const Matrix<T> h = layer_norm(x, b.ln1_w, b.ln1_b, ln1);
    Matrix<T> qkv = linear(h, b.qkv_w, b.qkv_b);
    Matrix<T> attn(L, w);
    if (cache) cache->probs.clear();
    for (int hd = 0; hd < heads; ++hd) {
      const auto q = qkv.middleCols(hd * d, d);
      const auto k = qkv.middleCols(w + hd * d, d);
      const auto v = qkv.middleCols(2 * w + hd * d, d);
      Matrix<T> p = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < L; ++i) {
        const Eigen::Index visible = causal ? i + 1 : L;
        const T m = p.row(i).head(visible).maxCoeff();
        T sum = 0;
        for (Eigen::Index j = 0; j < visible; ++j) {
          p(i, j) = std::exp(p(i, j) - m);
          sum += p(i, j);
        }
        for (Eigen::Index j = 0; j < visible; ++j) p(i, j) /= sum;
        for (Eigen::Index j = visible; j < L; ++j) p(i, j) = 0;
      }
      attn.middleCols(hd * d, d) = p * v;
      if (cache) cache->probs.push_back(std::move(p));
    }
    Matrix<T> x_mid = x + linear(attn, b.out_w, b.out_b);

    LayerNormCache<T>* ln2 = cache ? &cache->ln2 : nullptr;
    const Matrix<T> h2 = layer_norm(x_mid, b.ln2_w, b.ln2_b, ln2);
    Matrix<T> f = linear(h2, b.fc_w, b.fc_b);
    Matrix<T> g = activate(f, act);
    Matrix<T> y = x_mid + linear(g, b.proj_w, b.proj_b);
    if (cache) {
      cache->qkv = std::move(qkv);
      cache->attn = std::move(attn);
      cache->f = std::move(f);
      cache->g = std::move(g);
    }
    return y;
  }

  template <typename T>
  static Matrix<T> backward(const TextEncoder::Block& b, const Matrix<T>& dy, int heads,
                            Activation act, const BlockCache<T>& cache) {
    const Eigen::Index L = dy.rows();
    const Eigen::Index w = dy.cols();
    const Eigen::Index d = w / heads;
    const T scale = T(1) / std::sqrt(T(d));

    // MLP branch.
    const Matrix<T> dg = linear_backward(dy, b.proj_w);
    const Matrix<T> df = dg.cwiseProduct(activate_grad(cache.f, act));
    const Matrix<T> dh2 = linear_backward(df, b.fc_w);
    const Matrix<T> dx_mid = dy + layer_norm_backward(dh2, b.ln2_w, cache.ln2);

    // Attention branch.
    const Matrix<T> dattn = linear_backward(dx_mid, b.out_w);
    Matrix<T> dqkv = Matrix<T>::Zero(L, 3 * w);
    for (int hd = 0; hd < heads; ++hd) {
      const auto q = cache.qkv.middleCols(hd * d, d);
      const auto k = cache.qkv.middleCols(w + hd * d, d);
      const auto v = cache.qkv.middleCols(2 * w + hd * d, d);
      const Matrix<T>& p = cache.probs[hd];
      const auto dout = dattn.middleCols(hd * d, d);
      const Matrix<T> dp = dout * v.transpose();
      dqkv.middleCols(2 * w + hd * d, d) = p.transpose() * dout;
      const Vector<T> row_dot = (dp.array() * p.array()).rowwise().sum();
      const Matrix<T> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * scale;
      dqkv.middleCols(hd * d, d) = ds * k;
      dqkv.middleCols(w + hd * d, d) = ds.transpose() * q;
    }
    const Matrix<T> dh = linear_backward(dqkv, b.qkv_w);
    return dx_mid + layer_norm_backward(dh, b.ln1_w, cache.ln1);
  }
};

EncoderConfig EncoderConfig::from_archive(const TensorArchive& archive) {
  EncoderConfig c;
  c.embed_dim = static_cast<int>(archive.meta_int("embed_dim"));
  c.context_length = static_cast<int>(archive.meta_int("context_length"));
  c.image_resolution = static_cast<int>(archive.meta_int("image_resolution"));
  c.patch_size = static_cast<int>(archive.meta_int("patch_size"));
  c.vocab_size = static_cast<int>(archive.meta_int("vocab_size"));
  if (c.context_length != kContextLength)
    throw Error(Errc::ShapeMismatch, "context_length must be " + std::to_string(kContextLength));
  if (c.patch_size <= 0 || c.image_resolution % c.patch_size != 0)
    throw Error(Errc::ShapeMismatch, "image_resolution not divisible by patch_size");

  auto act = archive.metadata.find("activation");
  if (act != archive.metadata.end()) {
    if (act->second == "gelu") c.activation = Activation::Gelu;
    else if (act->second == "quick_gelu") c.activation = Activation::QuickGelu;
    else throw Error(Errc::CorruptArchive, "unknown activation " + act->second);
  }

  if (archive.contains("text.token_embedding")) {
    c.text.width = static_cast<int>(archive.at("text.token_embedding").dim(1));
    c.text.layers = count_blocks(archive, "text.blocks.");
    c.text.heads = static_cast<int>(archive.meta_int("text_heads", std::max(1, c.text.width / 64)));
    if (c.text.heads <= 0 || c.text.width % c.text.heads != 0)
      throw Error(Errc::ShapeMismatch, "text width not divisible by heads");
  }
  if (archive.contains("vision.class_embedding")) {
    c.vision.width = static_cast<int>(archive.at("vision.class_embedding").dim(0));
    c.vision.layers = count_blocks(archive, "vision.blocks.");
    c.vision.heads =
        static_cast<int>(archive.meta_int("vision_heads", std::max(1, c.vision.width / 64)));
    if (c.vision.heads <= 0 || c.vision.width % c.vision.heads != 0)
      throw Error(Errc::ShapeMismatch, "vision width not divisible by heads");
  }
  return c;
}

namespace {

TextEncoder::Block load_block(const TensorArchive& a, const std::string& p, std::uint64_t w) {
  TextEncoder::Block b;
  b.ln1_w = expect(a, p + "ln_1.weight", {w});
  b.ln1_b = expect(a, p + "ln_1.bias", {w});
  b.qkv_w = expect(a, p + "attn.qkv.weight", {3 * w, w});
  b.qkv_b = expect(a, p + "attn.qkv.bias", {3 * w});
  b.out_w = expect(a, p + "attn.out.weight", {w, w});
  b.out_b = expect(a, p + "attn.out.bias", {w});
  b.ln2_w = expect(a, p + "ln_2.weight", {w});
  b.ln2_b = expect(a, p + "ln_2.bias", {w});
  const auto hidden = a.at(p + "mlp.fc.weight").dim(0);
  b.fc_w = expect(a, p + "mlp.fc.weight", {hidden, w});
  b.fc_b = expect(a, p + "mlp.fc.bias", {hidden});
  b.proj_w = expect(a, p + "mlp.proj.weight", {w, hidden});
  b.proj_b = expect(a, p + "mlp.proj.bias", {w});
  return b;
}

}  // namespace

TextEncoder::TextEncoder(const TensorArchive& archive)
    : config_(EncoderConfig::from_archive(archive)) {
  if (config_.text.width == 0) throw Error(Errc::MissingTensor, "text.token_embedding");
  const auto w = static_cast<std::uint64_t>(config_.text.width);
  const auto ctx = static_cast<std::uint64_t>(config_.context_length);
  token_embedding_ =
      expect(archive, "text.token_embedding", {static_cast<std::uint64_t>(config_.vocab_size), w});
  positional_embedding_ = expect(archive, "text.positional_embedding", {ctx, w});
  for (int i = 0; i < config_.text.layers; ++i)
    blocks_.push_back(load_block(archive, "text.blocks." + std::to_string(i) + ".", w));
  ln_final_w_ = expect(archive, "text.ln_final.weight", {w});
  ln_final_b_ = expect(archive, "text.ln_final.bias", {w});
  projection_ =
      expect(archive, "text.projection", {w, static_cast<std::uint64_t>(config_.embed_dim)});
}

void TextEncoder::check_rows(int rows, int cols, int eot_position) const {
  if (rows != config_.context_length || cols != config_.text.width)
    throw Error(Errc::ShapeMismatch, "token embedding matrix must be [" +
                                         std::to_string(config_.context_length) + ", " +
                                         std::to_string(config_.text.width) + "]");
  if (eot_position < 0 || eot_position >= config_.context_length)
    throw Error(Errc::ShapeMismatch, "eot position out of range");
}

TokenEmbeddingMatrix TextEncoder::embed_tokens(const TokenSequence& tokens) const {
  const auto table = mat(token_embedding_, config_.vocab_size, config_.text.width);
  TokenEmbeddingMatrix rows(config_.context_length, config_.text.width);
  for (int i = 0; i < config_.context_length; ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || id >= config_.vocab_size)
      throw Error(Errc::ShapeMismatch, "token id " + std::to_string(id) + " outside vocabulary");
    rows.row(i) = table.row(id);
  }
  return rows;
}

template <typename T>
Vector<T> TextEncoder::forward(const Matrix<T>& rows, int eot_position, bool full_sequence) const {
  check_rows(static_cast<int>(rows.rows()), static_cast<int>(rows.cols()), eot_position);
  const Eigen::Index L = full_sequence ? config_.context_length : eot_position + 1;
  const Eigen::Index w = config_.text.width;
  Matrix<T> x = rows.topRows(L) +
                mat(positional_embedding_, config_.context_length, w).topRows(L).template cast<T>();
  for (const auto& b : blocks_)
    x = BlockMath::forward<T>(b, x, config_.text.heads, /*causal=*/true, config_.activation, nullptr);
  const Matrix<T> eot_row = x.row(eot_position);
  const Matrix<T> y = layer_norm<T>(eot_row, ln_final_w_, ln_final_b_, nullptr);
  const Vector<T> z =
      (y * mat(projection_, w, config_.embed_dim).template cast<T>()).transpose();
  return normalize<T>(z);
}

template <typename T>
Matrix<T> TextEncoder::backward(const Matrix<T>& rows, int eot_position,
                                const Vector<T>& cotangent) const {
  check_rows(static_cast<int>(rows.rows()), static_cast<int>(rows.cols()), eot_position);
  if (cotangent.size() != config_.embed_dim)
    throw Error(Errc::ShapeMismatch, "cotangent must have embed_dim entries");
  const Eigen::Index L = eot_position + 1;
  const Eigen::Index w = config_.text.width;
  const auto proj = mat(projection_, w, config_.embed_dim).template cast<T>();

  // Forward with caches.
  std::vector<BlockCache<T>> caches(blocks_.size());
  Matrix<T> x = rows.topRows(L) +
                mat(positional_embedding_, config_.context_length, w).topRows(L).template cast<T>();
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    x = BlockMath::forward<T>(blocks_[i], x, config_.text.heads, true, config_.activation,
                              &caches[i]);
  LayerNormCache<T> ln_final;
  const Matrix<T> eot_row = x.row(eot_position);
  const Matrix<T> y = layer_norm<T>(eot_row, ln_final_w_, ln_final_b_, &ln_final);
  const Vector<T> z = (y * proj).transpose();
  T norm = 0;
  const Vector<T> out = normalize<T>(z, &norm);

  // Backward.
  const Vector<T> dz = (cotangent - out * out.dot(cotangent)) / norm;
  const Matrix<T> dy = dz.transpose() * proj.transpose();
  Matrix<T> dx = Matrix<T>::Zero(L, w);
  dx.row(eot_position) = layer_norm_backward<T>(dy, ln_final_w_, ln_final);
  for (std::size_t i = blocks_.size(); i-- > 0;)
    dx = BlockMath::backward<T>(blocks_[i], dx, config_.text.heads, config_.activation, caches[i]);

  Matrix<T> grad = Matrix<T>::Zero(rows.rows(), rows.cols());
  grad.topRows(L) = dx;
  return grad;
}

template Vector<float> TextEncoder::forward<float>(const Matrix<float>&, int, bool) const;
template Vector<double> TextEncoder::forward<double>(const Matrix<double>&, int, bool) const;
template Matrix<float> TextEncoder::backward<float>(const Matrix<float>&, int,
                                                    const Vector<float>&) const;
template Matrix<double> TextEncoder::backward<double>(const Matrix<double>&, int,
                                                      const Vector<double>&) const;

Embedding TextEncoder::encode_from_embeddings(const TokenEmbeddingMatrix& rows,
                                              int eot_position) const {
  return to_embedding(forward<float>(rows, eot_position));
}

Embedding TextEncoder::encode(const TokenSequence& tokens) const {
  return encode_from_embeddings(embed_tokens(tokens), tokens.eot_position());
}

TokenEmbeddingMatrix TextEncoder::vjp(const TokenEmbeddingMatrix& rows, int eot_position,
                                      const VectorF& cotangent) const {
  return backward<float>(rows, eot_position, cotangent);
}

ImageEncoder::ImageEncoder(const TensorArchive& archive)
    : config_(EncoderConfig::from_archive(archive)) {
  if (config_.vision.width == 0) throw Error(Errc::MissingTensor, "vision.class_embedding");
  const auto w = static_cast<std::uint64_t>(config_.vision.width);
  const auto p = static_cast<std::uint64_t>(config_.patch_size);
  const auto tokens = static_cast<std::uint64_t>(config_.grid() * config_.grid() + 1);
  patch_embedding_ = expect(archive, "vision.patch_embedding", {w, 3, p, p});
  class_embedding_ = expect(archive, "vision.class_embedding", {w});
  positional_embedding_ = expect(archive, "vision.positional_embedding", {tokens, w});
  ln_pre_w_ = expect(archive, "vision.ln_pre.weight", {w});
  ln_pre_b_ = expect(archive, "vision.ln_pre.bias", {w});
  for (int i = 0; i < config_.vision.layers; ++i)
    blocks_.push_back(load_block(archive, "vision.blocks." + std::to_string(i) + ".", w));
  ln_post_w_ = expect(archive, "vision.ln_post.weight", {w});
  ln_post_b_ = expect(archive, "vision.ln_post.bias", {w});
  projection_ =
      expect(archive, "vision.projection", {w, static_cast<std::uint64_t>(config_.embed_dim)});
}

Embedding ImageEncoder::encode(const Image& pixels) const {
  const int res = config_.image_resolution;
  if (pixels.channels != 3 || pixels.height != res || pixels.width != res)
    throw Error(Errc::ShapeMismatch, "image must be 3x" + std::to_string(res) + "x" +
                                         std::to_string(res));
  const int p = config_.patch_size;
  const int grid = config_.grid();
  const int w = config_.vision.width;
  const int patch_len = 3 * p * p;

  MatrixF patches(grid * grid, patch_len);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      auto row = patches.row(gy * grid + gx);
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int ky = 0; ky < p; ++ky)
          for (int kx = 0; kx < p; ++kx) row(k++) = pixels.at(c, gy * p + ky, gx * p + kx);
    }

  MatrixF x(grid * grid + 1, w);
  x.row(0) = vec(class_embedding_).transpose();
  x.bottomRows(grid * grid) = patches * mat(patch_embedding_, w, patch_len).transpose();
  x += mat(positional_embedding_, grid * grid + 1, w);
  x = layer_norm<float>(x, ln_pre_w_, ln_pre_b_, nullptr);
  for (const auto& b : blocks_)
    x = BlockMath::forward<float>(b, x, config_.vision.heads, /*causal=*/false, config_.activation,
                                  nullptr);
  const MatrixF cls = x.row(0);
  const MatrixF y = layer_norm<float>(cls, ln_post_w_, ln_post_b_, nullptr);
  const VectorF z = (y * mat(projection_, w, config_.embed_dim)).transpose();
  return to_embedding(normalize<float>(z));
}

Embedding encode_image(const Image& pixels, const TensorArchive& archive) {
  return ImageEncoder(archive).encode(pixels);
}

Embedding encode_text(const TokenSequence& tokens, const TensorArchive& archive) {
  return TextEncoder(archive).encode(tokens);
}

TokenEmbeddingMatrix embed_tokens(const TokenSequence& tokens, const TensorArchive& archive) {
  return TextEncoder(archive).embed_tokens(tokens);
}

Embedding encode_text_from_embeddings(const TokenEmbeddingMatrix& rows, int eot_position,
                                      const TensorArchive& archive) {
  return TextEncoder(archive).encode_from_embeddings(rows, eot_position);
}

TokenEmbeddingMatrix text_encoder_vjp(const TokenEmbeddingMatrix& rows, int eot_position,
                                      const VectorF& cotangent, const TensorArchive& archive) {
  return TextEncoder(archive).vjp(rows, eot_position, cotangent);
}

float logit_scale(const TensorArchive& archive) {
  if (!archive.contains("logit_scale")) return 100.0f;
  const auto& t = archive.at("logit_scale");
  if (t.size() != 1) throw Error(Errc::ShapeMismatch, "logit_scale must hold one value");
  return std::exp(t[0]);
}

}  // namespace cloudgate
