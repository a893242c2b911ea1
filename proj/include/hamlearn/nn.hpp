#pragma once

// Small dense-network kernel: dense layers, an LSTM cell with hand-written
// backpropagation through time, temporal average pooling, Adam, and a flat
// float64 parameter layout with a bit-exact checkpoint format.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hamlearn/error.hpp"
#include "json.hpp"

namespace hamlearn::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)), values(count_of(shape), 0.0) {}
  Tensor(std::vector<std::size_t> dims, std::vector<double> v) : shape(std::move(dims)), values(std::move(v)) {
    check();
  }

  std::size_t count() const { return count_of(shape); }

  void check() const {
    if (values.size() != count()) throw ShapeMismatch("tensor value count does not match its shape");
    for (double v : values)
      if (!std::isfinite(v)) throw NonFinite("tensor holds a non-finite value");
  }

 private:
  static std::size_t count_of(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

enum class Activation { Identity, Tanh, Sigmoid };

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline Vector activate(const Vector& z, Activation act) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  return z;
}

/// d act / d z expressed through the activation output y.
inline Vector activation_slope(const Vector& y, Activation act) {
  switch (act) {
    case Activation::Identity: return Vector::Ones(y.size());
    case Activation::Tanh: return (1.0 - y.array().square()).matrix();
    case Activation::Sigmoid: return (y.array() * (1.0 - y.array())).matrix();
  }
  return Vector::Ones(y.size());
}

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NonFinite(std::string(what) + ": non-finite value");
}

/// y = act(W x + b).
inline Vector dense_forward(const Eigen::Ref<const Matrix>& W, const Eigen::Ref<const Vector>& b,
                            const Eigen::Ref<const Vector>& x, Activation act) {
  if (W.cols() != x.size() || W.rows() != b.size()) throw ShapeMismatch("dense_forward: shape mismatch");
  Vector y = activate(W * x + b, act);
  require_finite(y, "dense_forward");
  return y;
}

/// Accumulates dW and db and returns dx, given the forward input x, output y
/// and dloss/dy.
inline Vector dense_backward(const Eigen::Ref<const Matrix>& W, const Eigen::Ref<const Vector>& x,
                             const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Vector>& dy, Activation act,
                             Eigen::Ref<Matrix> dW, Eigen::Ref<Vector> db) {
  if (dy.size() != W.rows() || x.size() != W.cols() || dW.rows() != W.rows() || dW.cols() != W.cols())
    throw ShapeMismatch("dense_backward: shape mismatch");
  const Vector dz = dy.cwiseProduct(activation_slope(y, act));
  dW.noalias() += dz * x.transpose();
  db += dz;
  return W.transpose() * dz;
}

// ---------------------------------------------------------------------------
// LSTM

struct LstmState {
  Vector h;
  Vector c;

  static LstmState zeros(Eigen::Index hidden) { return {Vector::Zero(hidden), Vector::Zero(hidden)}; }
};

/// Gate rows are stacked (input, forget, cell, output), each `hidden` long.
struct LstmParams {
  ConstMatrixMap W;  // 4h x in
  ConstMatrixMap U;  // 4h x h
  ConstVectorMap b;  // 4h

  Eigen::Index hidden() const { return U.cols(); }
  Eigen::Index input() const { return W.cols(); }
};

struct LstmGrads {
  MatrixMap W;
  MatrixMap U;
  VectorMap b;
};

struct LstmCache {
  Vector x;
  Vector h_prev;
  Vector c_prev;
  Vector gates;  // activated i, f, g, o
  Vector tanh_c;
};

inline LstmState lstm_cell(const Eigen::Ref<const Vector>& x, const LstmState& s, const LstmParams& p,
                           LstmCache* cache = nullptr) {
  const Eigen::Index h = p.hidden();
  if (x.size() != p.input() || s.h.size() != h || s.c.size() != h || p.W.rows() != 4 * h || p.b.size() != 4 * h)
    throw ShapeMismatch("lstm_cell: shape mismatch");
  Vector z = p.b;
  z.noalias() += p.W * x;
  z.noalias() += p.U * s.h;
  for (Eigen::Index k = 0; k < 4 * h; ++k) z(k) = (k >= 2 * h && k < 3 * h) ? std::tanh(z(k)) : sigmoid(z(k));
  LstmState out;
  out.c = z.segment(h, h).cwiseProduct(s.c) + z.segment(0, h).cwiseProduct(z.segment(2 * h, h));
  Vector tanh_c = out.c.array().tanh().matrix();
  out.h = z.segment(3 * h, h).cwiseProduct(tanh_c);
  if (!out.h.allFinite() || !out.c.allFinite()) throw NonFinite("lstm_cell: non-finite state");
  if (cache) {
    cache->x = x;
    cache->h_prev = s.h;
    cache->c_prev = s.c;
    cache->gates = std::move(z);
    cache->tanh_c = std::move(tanh_c);
  }
  return out;
}

/// Backward through one cell.  dh and dc are dloss/d(h', c'); parameter
/// gradients accumulate into g.  Outputs dloss/d(x, h, c).
inline void lstm_cell_backward(const LstmParams& p, const LstmCache& cache, const Vector& dh, const Vector& dc,
                               LstmGrads& g, Vector& dx, Vector& dh_prev, Vector& dc_prev) {
  const Eigen::Index h = p.hidden();
  const auto i = cache.gates.segment(0, h);
  const auto f = cache.gates.segment(h, h);
  const auto gg = cache.gates.segment(2 * h, h);
  const auto o = cache.gates.segment(3 * h, h);
  const Vector dct =
      dc + dh.cwiseProduct(o).cwiseProduct((1.0 - cache.tanh_c.array().square()).matrix());
  Vector dz(4 * h);
  dz.segment(0, h) = dct.cwiseProduct(gg).cwiseProduct((i.array() * (1.0 - i.array())).matrix());
  dz.segment(h, h) = dct.cwiseProduct(cache.c_prev).cwiseProduct((f.array() * (1.0 - f.array())).matrix());
  dz.segment(2 * h, h) = dct.cwiseProduct(i).cwiseProduct((1.0 - gg.array().square()).matrix());
  dz.segment(3 * h, h) = dh.cwiseProduct(cache.tanh_c).cwiseProduct((o.array() * (1.0 - o.array())).matrix());
  g.W.noalias() += dz * cache.x.transpose();
  g.U.noalias() += dz * cache.h_prev.transpose();
  g.b += dz;
  dx = p.W.transpose() * dz;
  dh_prev = p.U.transpose() * dz;
  dc_prev = dct.cwiseProduct(f);
}

/// Runs the cell over the rows of xs (steps x in) from state s0.
inline LstmState lstm_sequence(const Eigen::Ref<const Matrix>& xs, const LstmState& s0, const LstmParams& p,
                               std::vector<LstmCache>* caches = nullptr) {
  LstmState s = s0;
  if (caches) caches->resize(static_cast<std::size_t>(xs.rows()));
  for (Eigen::Index t = 0; t < xs.rows(); ++t)
    s = lstm_cell(xs.row(t).transpose(), s, p, caches ? &(*caches)[static_cast<std::size_t>(t)] : nullptr);
  return s;
}

/// BPTT for a sequence whose loss depends on the final state only (dh_T, dc_T)
/// plus optional per-step hidden gradients dhs (steps x h, may be empty).
/// Returns dloss/dxs; dloss/d(s0) goes to dh0/dc0 when non-null.
inline Matrix lstm_sequence_backward(const LstmParams& p, const std::vector<LstmCache>& caches, const Vector& dh_T,
                                     const Vector& dc_T, LstmGrads& g, const Matrix* dhs = nullptr,
                                     Vector* dh0 = nullptr, Vector* dc0 = nullptr) {
  const auto steps = static_cast<Eigen::Index>(caches.size());
  Matrix dxs(steps, p.input());
  Vector dh = dh_T, dc = dc_T, dx, dh_prev, dc_prev;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    if (dhs && dhs->size() > 0) dh += dhs->row(t).transpose();
    lstm_cell_backward(p, caches[static_cast<std::size_t>(t)], dh, dc, g, dx, dh_prev, dc_prev);
    dxs.row(t) = dx.transpose();
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);
  }
  if (dh0) *dh0 = dh;
  if (dc0) *dc0 = dc;
  return dxs;
}

// ---------------------------------------------------------------------------
// Pooling

/// Non-overlapping block means along time; x is steps x channels.
inline Matrix avg_pool_time(const Eigen::Ref<const Matrix>& x, std::size_t window) {
  const auto w = static_cast<Eigen::Index>(window);
  if (w <= 0 || x.rows() % w != 0) throw ShapeMismatch("avg_pool_time: window does not divide the sequence length");
  if (w == 1) return x;
  Matrix out(x.rows() / w, x.cols());
  for (Eigen::Index t = 0; t < out.rows(); ++t) out.row(t) = x.middleRows(t * w, w).colwise().mean();
  return out;
}

inline Matrix avg_pool_time_backward(const Eigen::Ref<const Matrix>& dy, std::size_t window) {
  const auto w = static_cast<Eigen::Index>(window);
  Matrix dx(dy.rows() * w, dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) dx.middleRows(t * w, w).rowwise() = dy.row(t) / static_cast<double>(w);
  return dx;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& st, double lr,
                           const AdamConfig& cfg = {}) {
  if (grads.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeMismatch("optimizer_step: parameter, gradient and state sizes differ");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Parameter layout

struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

/// Named column-major blocks packed into one flat vector.
class ParameterLayout {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols = 1) {
    for (const auto& b : blocks_)
      if (b.name == name) throw InvalidInput("duplicate parameter block '" + name + "'");
    blocks_.push_back({std::move(name), size_, rows, cols});
    size_ += rows * cols;
    return blocks_.back().offset;
  }

  std::size_t size() const { return size_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  const Block& find(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw InvalidInput("no parameter block '" + name + "'");
  }

  Tensor tensor(std::span<const double> values, const std::string& name) const {
    const Block& b = find(name);
    return Tensor({b.rows, b.cols}, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                                        values.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size())));
  }

 private:
  std::vector<Block> blocks_;
  std::size_t size_ = 0;
};

/// Offsets of one dense layer inside a ParameterLayout.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::Identity;
  std::size_t w = 0;
  std::size_t b = 0;

  static DenseLayer add(ParameterLayout& layout, const std::string& name, std::size_t in, std::size_t out,
                        Activation act) {
    DenseLayer d{in, out, act, 0, 0};
    d.w = layout.add(name + ".W", out, in);
    d.b = layout.add(name + ".b", out);
    return d;
  }

  ConstMatrixMap W(const double* v) const { return {v + w, Eigen::Index(out), Eigen::Index(in)}; }
  ConstVectorMap bias(const double* v) const { return {v + b, Eigen::Index(out)}; }

  Vector forward(const double* v, const Eigen::Ref<const Vector>& x) const { return dense_forward(W(v), bias(v), x, act); }

  Vector backward(const double* v, double* g, const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                  const Eigen::Ref<const Vector>& dy) const {
    MatrixMap dW(g + w, Eigen::Index(out), Eigen::Index(in));
    VectorMap db(g + b, Eigen::Index(out));
    return dense_backward(W(v), x, y, dy, act, dW, db);
  }

  /// Uniform(+-1/sqrt(in)) weights, zero bias.
  void init(double* v, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) v[w + k] = bound * u(rng);
    for (std::size_t k = 0; k < out; ++k) v[b + k] = 0.0;
  }

  void zero(double* v) const {
    std::fill(v + w, v + w + in * out, 0.0);
    std::fill(v + b, v + b + out, 0.0);
  }
};

/// Offsets of one LSTM cell inside a ParameterLayout.
struct LstmLayer {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t w = 0;
  std::size_t u = 0;
  std::size_t b = 0;

  static LstmLayer add(ParameterLayout& layout, const std::string& name, std::size_t in, std::size_t hidden) {
    LstmLayer l{in, hidden, 0, 0, 0};
    l.w = layout.add(name + ".W", 4 * hidden, in);
    l.u = layout.add(name + ".U", 4 * hidden, hidden);
    l.b = layout.add(name + ".b", 4 * hidden);
    return l;
  }

  LstmParams params(const double* v) const {
    const auto h4 = Eigen::Index(4 * hidden);
    return {ConstMatrixMap(v + w, h4, Eigen::Index(in)), ConstMatrixMap(v + u, h4, Eigen::Index(hidden)),
            ConstVectorMap(v + b, h4)};
  }

  LstmGrads grads(double* g) const {
    const auto h4 = Eigen::Index(4 * hidden);
    return {MatrixMap(g + w, h4, Eigen::Index(in)), MatrixMap(g + u, h4, Eigen::Index(hidden)), VectorMap(g + b, h4)};
  }

  /// Uniform(+-1/sqrt(fan_in)) for input and recurrent weights, zero biases
  /// except the forget gate at 1.
  void init(double* v, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u01(-1.0, 1.0);
    const double bw = 1.0 / std::sqrt(static_cast<double>(in));
    const double bu = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t k = 0; k < 4 * hidden * in; ++k) v[w + k] = bw * u01(rng);
    for (std::size_t k = 0; k < 4 * hidden * hidden; ++k) v[u + k] = bu * u01(rng);
    for (std::size_t k = 0; k < 4 * hidden; ++k) v[b + k] = (k >= hidden && k < 2 * hidden) ? 1.0 : 0.0;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint: 8-byte magic, u64 header length, JSON header, u64 value count,
// float64 values; all integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'H', 'M', 'L', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  if (pos + 8 > in.size()) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const nlohmann::json& header, std::span<const double> values) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string h = header.dump();
  detail::put_u64(out, h.size());
  out += h;
  detail::put_u64(out, values.size());
  for (double v : values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline std::pair<nlohmann::json, std::vector<double>> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || bytes.compare(0, sizeof kCheckpointMagic, kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw IoError("not a checkpoint file");
  std::size_t pos = sizeof kCheckpointMagic;
  const std::uint64_t hlen = detail::get_u64(bytes, pos);
  pos += 8;
  if (pos + hlen > bytes.size()) throw IoError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }
  pos += hlen;
  const std::uint64_t n = detail::get_u64(bytes, pos);
  pos += 8;
  if (bytes.size() != pos + 8 * n) throw IoError("checkpoint blob length mismatch");
  std::vector<double> values(n);
  for (std::uint64_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(detail::get_u64(bytes, pos + 8 * i));
  return {std::move(header), std::move(values)};
}

inline void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                             std::span<const double> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_checkpoint(header, values);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::pair<nlohmann::json, std::vector<double>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hamlearn::nn
