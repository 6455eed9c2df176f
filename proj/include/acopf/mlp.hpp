#pragma once

// From-scratch feed-forward network: ReLU hidden layers, affine output,
// MSE loss, analytic backpropagation, bias-corrected Adam, and a
// deterministic seeded minibatch training loop. Checkpoints round-trip
// losslessly including scalers, output codec, and optimizer state.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "acopf/dataset.hpp"  // ScalerStats, fit_scaler, binary IO helpers
#include "acopf/rng.hpp"

namespace acopf {

// Bounded output coordinates are squashed onto [lo, hi] with a sigmoid; the
// network learns in logit space. Coordinates with hi <= lo pass through
// unchanged (used for voltage angles, which are unbounded by the model).
struct OutputCodec {
  Eigen::VectorXd lo, hi;

  int size() const { return static_cast<int>(lo.size()); }

  double encode1(int k, double x) const {
    if (!(hi[k] > lo[k])) return x;
    double t = (x - lo[k]) / (hi[k] - lo[k]);
    t = std::min(1.0 - 1e-12, std::max(1e-12, t));
    return std::log(t / (1.0 - t));
  }
  double decode1(int k, double y) const {
    if (!(hi[k] > lo[k])) return y;
    return lo[k] + (hi[k] - lo[k]) / (1.0 + std::exp(-y));
  }
  Eigen::VectorXd encode(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y(x.size());
    for (int k = 0; k < x.size(); ++k) y[k] = encode1(k, x[k]);
    return y;
  }
  Eigen::VectorXd decode(const Eigen::VectorXd& y) const {
    Eigen::VectorXd x(y.size());
    for (int k = 0; k < y.size(); ++k) x[k] = decode1(k, y[k]);
    return x;
  }
};

inline OutputCodec identity_codec(int dim) {
  OutputCodec c;
  c.lo = Eigen::VectorXd::Zero(dim);
  c.hi = Eigen::VectorXd::Zero(dim);
  return c;
}

struct MlpModel {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;
  ScalerStats input_scaler, output_scaler;  // fit on (encoded) train data
  OutputCodec codec;
  std::uint64_t seed = 0;

  int d_in() const { return layer_sizes.front(); }
  int d_out() const { return layer_sizes.back(); }
  int n_layers() const { return static_cast<int>(weights.size()); }
};

struct TrainConfig {
  int batch_size = 50;
  int max_epochs = 4000;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t shuffle_seed = 1;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  std::int64_t step_count = 0;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> d_w;
  std::vector<Eigen::VectorXd> d_b;
};

inline std::int64_t parameter_count(const MlpModel& m) {
  std::int64_t n = 0;
  for (int l = 0; l < m.n_layers(); ++l)
    n += m.weights[l].size() + m.biases[l].size();
  return n;
}

inline MlpModel init_mlp(const std::vector<int>& layer_sizes,
                         std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("a network needs at least input and output layers");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("zero-sized layer");

  MlpModel m;
  m.layer_sizes = layer_sizes;
  m.seed = seed;
  m.codec = identity_codec(layer_sizes.back());
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
    Eigen::MatrixXd w(fan_out, fan_in);
    const double sd = std::sqrt(2.0 / fan_in);  // He init for ReLU chains
    for (int j = 0; j < fan_in; ++j)
      for (int i = 0; i < fan_out; ++i) w(i, j) = sd * rng.normal();
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

inline AdamState init_adam(const MlpModel& m) {
  AdamState st;
  for (int l = 0; l < m.n_layers(); ++l) {
    st.m_w.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    st.v_w.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    st.m_b.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
    st.v_b.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
  }
  return st;
}

// Batch forward in scaled space; columns are samples.
inline Eigen::MatrixXd forward_batch(const MlpModel& m,
                                     const Eigen::MatrixXd& x) {
  if (x.rows() != m.d_in())
    throw std::invalid_argument("input dimension " + std::to_string(x.rows()) +
                                " does not match network d_in " +
                                std::to_string(m.d_in()));
  Eigen::MatrixXd a = x;
  for (int l = 0; l < m.n_layers(); ++l) {
    a = (m.weights[l] * a).colwise() + m.biases[l];
    if (l + 1 < m.n_layers()) a = a.cwiseMax(0.0);  // ReLU on hidden layers
  }
  return a;
}

inline Eigen::VectorXd forward(const MlpModel& m, const Eigen::VectorXd& x) {
  return forward_batch(m, x);
}

inline double mse_loss(const Eigen::MatrixXd& pred,
                       const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("loss shape mismatch");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

// Analytic gradient of mse_loss(forward(x), y). ReLU subgradient at 0 is 0.
inline double backward(const MlpModel& m, const Eigen::MatrixXd& x,
                       const Eigen::MatrixXd& y, Gradients& g) {
  const int n_layers = m.n_layers();
  std::vector<Eigen::MatrixXd> act(n_layers + 1);  // post-activation per layer
  act[0] = x;
  for (int l = 0; l < n_layers; ++l) {
    act[l + 1] = (m.weights[l] * act[l]).colwise() + m.biases[l];
    if (l + 1 < n_layers) act[l + 1] = act[l + 1].cwiseMax(0.0);
  }
  const double loss = mse_loss(act[n_layers], y);

  g.d_w.resize(n_layers);
  g.d_b.resize(n_layers);
  Eigen::MatrixXd delta =
      (act[n_layers] - y) * (2.0 / static_cast<double>(act[n_layers].size()));
  for (int l = n_layers - 1; l >= 0; --l) {
    g.d_w[l] = delta * act[l].transpose();
    g.d_b[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = m.weights[l].transpose() * delta;
      delta = delta.cwiseProduct(
          (act[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

inline void adam_update(MlpModel& m, AdamState& st, const Gradients& g,
                        const TrainConfig& cfg) {
  ++st.step_count;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step_count));
  for (int l = 0; l < m.n_layers(); ++l) {
    st.m_w[l] = b1 * st.m_w[l] + (1.0 - b1) * g.d_w[l];
    st.v_w[l] = b2 * st.v_w[l] + (1.0 - b2) * g.d_w[l].cwiseAbs2();
    m.weights[l].array() -=
        cfg.learning_rate * (st.m_w[l].array() / c1) /
        ((st.v_w[l].array() / c2).sqrt() + cfg.adam_eps);
    st.m_b[l] = b1 * st.m_b[l] + (1.0 - b1) * g.d_b[l];
    st.v_b[l] = b2 * st.v_b[l] + (1.0 - b2) * g.d_b[l].cwiseAbs2();
    m.biases[l].array() -=
        cfg.learning_rate * (st.m_b[l].array() / c1) /
        ((st.v_b[l].array() / c2).sqrt() + cfg.adam_eps);
  }
}

struct TrainHistory {
  std::vector<double> train_mse, val_mse;  // one entry per epoch
};

// Seeded-minibatch training. x/y columns are samples in scaled space.
// Validation data are used for history only; no early stopping.
inline TrainHistory train(MlpModel& m, AdamState& st, const Eigen::MatrixXd& x,
                          const Eigen::MatrixXd& y, const Eigen::MatrixXd& x_val,
                          const Eigen::MatrixXd& y_val, const TrainConfig& cfg) {
  if (x.cols() == 0) throw std::invalid_argument("empty training set");
  if (x.cols() != y.cols())
    throw std::invalid_argument("train input/target count mismatch");
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
    throw std::invalid_argument("invalid training configuration");

  const int n = static_cast<int>(x.cols());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(cfg.shuffle_seed);

  TrainHistory hist;
  Gradients g;
  Eigen::MatrixXd bx, by;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      const int j = std::min(i, static_cast<int>(rng.uniform(0.0, i + 1.0)));
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    for (int start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
      const int len = std::min(cfg.batch_size, n - start);
      bx.resize(x.rows(), len);
      by.resize(y.rows(), len);
      for (int k = 0; k < len; ++k) {
        bx.col(k) = x.col(order[start + k]);
        by.col(k) = y.col(order[start + k]);
      }
      const double loss = backward(m, bx, by, g);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch));
      adam_update(m, st, g, cfg);
      epoch_loss += loss * len;
    }
    hist.train_mse.push_back(epoch_loss / n);
    hist.val_mse.push_back(
        x_val.cols() > 0 ? mse_loss(forward_batch(m, x_val), y_val) : 0.0);
  }
  return hist;
}

// ---- inference-boundary scaling -------------------------------------------

inline Eigen::VectorXd scale_input(const MlpModel& m, const Eigen::VectorXd& raw) {
  return (raw - m.input_scaler.mean).cwiseQuotient(m.input_scaler.scale);
}

inline Eigen::VectorXd encode_target(const MlpModel& m, const Eigen::VectorXd& raw) {
  return (m.codec.encode(raw) - m.output_scaler.mean)
      .cwiseQuotient(m.output_scaler.scale);
}

inline Eigen::VectorXd decode_output(const MlpModel& m, const Eigen::VectorXd& scaled) {
  return m.codec.decode(scaled.cwiseProduct(m.output_scaler.scale) +
                        m.output_scaler.mean);
}

// Raw input -> raw output: the full inference-boundary map.
inline Eigen::VectorXd predict(const MlpModel& m, const Eigen::VectorXd& raw) {
  return decode_output(m, forward(m, scale_input(m, raw)));
}

// ---- checkpoint file format ("ACKP") --------------------------------------
//
// Header: magic "ACKP", u32 version, u64 init seed, u64 config digest,
// u32 layer count, i32 layer sizes; then input/output scaler blocks and the
// codec lo/hi blocks (u64 length + doubles each); then per layer the weight
// matrix (row-major doubles) and bias vector; then Adam state: i64 step
// count and the moment blocks in the same layer order. Little-endian.

inline std::string serialize_model(const MlpModel& m, const AdamState& st,
                                   std::uint64_t config_digest = 0) {
  using namespace dataset_detail;
  std::string buf;
  buf.append("ACKP", 4);
  put<std::uint32_t>(buf, 1);
  put<std::uint64_t>(buf, m.seed);
  put<std::uint64_t>(buf, config_digest);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.layer_sizes.size()));
  for (int s : m.layer_sizes) put<std::int32_t>(buf, s);
  put_scaler(buf, m.input_scaler);
  put_scaler(buf, m.output_scaler);
  put<std::uint64_t>(buf, m.codec.lo.size());
  put_vec(buf, m.codec.lo);
  put_vec(buf, m.codec.hi);
  auto put_mat = [&](const Eigen::MatrixXd& w) {
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) put<double>(buf, w(i, j));
  };
  for (int l = 0; l < m.n_layers(); ++l) {
    put_mat(m.weights[l]);
    put_vec(buf, m.biases[l]);
  }
  put<std::int64_t>(buf, st.step_count);
  for (int l = 0; l < m.n_layers(); ++l) {
    put_mat(st.m_w[l]);
    put_mat(st.v_w[l]);
    put_vec(buf, st.m_b[l]);
    put_vec(buf, st.v_b[l]);
  }
  return buf;
}

inline void save_model(const MlpModel& m, const AdamState& st,
                       const std::string& path,
                       std::uint64_t config_digest = 0) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string buf = serialize_model(m, st, config_digest);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline MlpModel load_model(const std::string& path, AdamState* adam_out = nullptr,
                           std::uint64_t* digest_out = nullptr,
                           const std::vector<int>* expected_sizes = nullptr) {
  using namespace dataset_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ACKP", 4) != 0)
    throw std::runtime_error(path + ": not a model checkpoint");
  const auto version = take<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  MlpModel m;
  m.seed = take<std::uint64_t>(in);
  const auto digest = take<std::uint64_t>(in);
  const auto n_sizes = take<std::uint32_t>(in);
  m.layer_sizes.resize(n_sizes);
  for (auto& s : m.layer_sizes) s = take<std::int32_t>(in);
  if (expected_sizes && m.layer_sizes != *expected_sizes) {
    auto show = [](const std::vector<int>& v) {
      std::string s = "[";
      for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
      return s + "]";
    };
    throw std::runtime_error(path + ": checkpoint layer sizes " +
                             show(m.layer_sizes) + " do not match expected " +
                             show(*expected_sizes));
  }
  m.input_scaler = take_scaler(in);
  m.output_scaler = take_scaler(in);
  const auto n_codec = take<std::uint64_t>(in);
  m.codec.lo = take_vec(in, n_codec);
  m.codec.hi = take_vec(in, n_codec);
  auto take_mat = [&](int rows, int cols) {
    Eigen::MatrixXd w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = take<double>(in);
    return w;
  };
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    m.weights.push_back(take_mat(m.layer_sizes[l + 1], m.layer_sizes[l]));
    m.biases.push_back(take_vec(in, m.layer_sizes[l + 1]));
  }
  AdamState st;
  st.step_count = take<std::int64_t>(in);
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    st.m_w.push_back(take_mat(m.layer_sizes[l + 1], m.layer_sizes[l]));
    st.v_w.push_back(take_mat(m.layer_sizes[l + 1], m.layer_sizes[l]));
    st.m_b.push_back(take_vec(in, m.layer_sizes[l + 1]));
    st.v_b.push_back(take_vec(in, m.layer_sizes[l + 1]));
  }
  if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  if (adam_out) *adam_out = std::move(st);
  if (digest_out) *digest_out = digest;
  return m;
}

}  // namespace acopf
