#include "imuot/tracker.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "imuot/error.hpp"

namespace imuot {

namespace {

constexpr double kPi = std::numbers::pi;

Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

Matrix leaky(const Matrix& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Matrix leaky_grad(const Matrix& pre, double slope) {
  return pre.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

void fill_uniform(Matrix& m, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
}

// (b * steps + s) row order <-> step-major columns n = s * batch + b.
Matrix rows_to_columns(const Matrix& rows, int batch, int steps) {
  Matrix cols(rows.cols(), rows.rows());
  for (int b = 0; b < batch; ++b) {
    for (int s = 0; s < steps; ++s) cols.col(s * batch + b) = rows.row(b * steps + s).transpose();
  }
  return cols;
}

Matrix columns_to_rows(const Matrix& cols, int batch, int steps) {
  Matrix rows(cols.cols(), cols.rows());
  for (int b = 0; b < batch; ++b) {
    for (int s = 0; s < steps; ++s) rows.row(b * steps + s) = cols.col(s * batch + b).transpose();
  }
  return rows;
}

void apply_head(const Matrix& out, Head head, Eigen::Ref<Matrix> estimate) {
  estimate = out;
  if (head == Head::kPolar) {
    estimate.row(1) = kPi * out.row(1).array().tanh();
  }
}

void encode_into(const TrackerParams& params, const WindowBatch& batch, ForwardPass& pass) {
  const TrackerConfig& cfg = params.config;
  if (batch.window != cfg.window || batch.channels != cfg.channels) {
    throw ArgumentError("window batch shape (" + std::to_string(batch.window) + " x " +
                        std::to_string(batch.channels) + ") does not match tracker (" +
                        std::to_string(cfg.window) + " x " + std::to_string(cfg.channels) + ")");
  }
  batch.validate();
  const int B = batch.batch;
  const int S = batch.steps;
  const int N = B * S;
  const int W = cfg.window;
  const int C = cfg.channels;
  const int K = cfg.kernel;
  const int stride = cfg.stride;
  const int L1 = cfg.conv1_length();
  const int L2 = cfg.conv2_length();
  pass.batch = B;
  pass.steps = S;

  pass.patches1.resize(C * K, static_cast<Eigen::Index>(N) * L1);
  for (int s = 0; s < S; ++s) {
    for (int b = 0; b < B; ++b) {
      const int n = s * B + b;
      const int base = (b * S + s) * W;
      for (int p = 0; p < L1; ++p) {
        auto col = pass.patches1.col(static_cast<Eigen::Index>(n) * L1 + p);
        for (int c = 0; c < C; ++c) {
          for (int k = 0; k < K; ++k) col[c * K + k] = batch.inputs(base + p * stride + k, c);
        }
      }
    }
  }
  pass.pre1 = params.conv1_w * pass.patches1;
  pass.pre1.colwise() += params.conv1_b.col(0);
  pass.act1 = leaky(pass.pre1, cfg.leaky_slope);

  const int C1 = cfg.conv1_channels;
  pass.patches2.resize(C1 * K, static_cast<Eigen::Index>(N) * L2);
  for (int n = 0; n < N; ++n) {
    for (int p = 0; p < L2; ++p) {
      auto col = pass.patches2.col(static_cast<Eigen::Index>(n) * L2 + p);
      for (int ch = 0; ch < C1; ++ch) {
        for (int k = 0; k < K; ++k) {
          col[ch * K + k] = pass.act1(ch, static_cast<Eigen::Index>(n) * L1 + p * stride + k);
        }
      }
    }
  }
  pass.pre2 = params.conv2_w * pass.patches2;
  pass.pre2.colwise() += params.conv2_b.col(0);
  pass.act2 = leaky(pass.pre2, cfg.leaky_slope);

  const int H = cfg.hidden;
  pass.lstm.resize(params.lstm.size());
  for (std::size_t l = 0; l < params.lstm.size(); ++l) {
    const LstmLayer& layer = params.lstm[l];
    ForwardPass::LstmTrace& tr = pass.lstm[l];
    if (l == 0) {
      tr.input = Eigen::Map<const Matrix>(pass.act2.data(), cfg.flat_size(), N);
    } else {
      tr.input = pass.lstm[l - 1].hidden;
    }
    Matrix pre = layer.wx * tr.input;
    pre.colwise() += layer.b.col(0);
    tr.gates.resize(4 * H, N);
    tr.cell.resize(H, N);
    tr.cell_tanh.resize(H, N);
    tr.hidden.resize(H, N);
    Matrix h_prev = Matrix::Zero(H, B);
    Matrix c_prev = Matrix::Zero(H, B);
    for (int s = 0; s < S; ++s) {
      const Matrix g = pre.middleCols(s * B, B) + layer.wh * h_prev;
      auto gates = tr.gates.middleCols(s * B, B);
      gates.topRows(2 * H) = sigmoid(g.topRows(2 * H));
      gates.middleRows(2 * H, H) = g.middleRows(2 * H, H).array().tanh();
      gates.bottomRows(H) = sigmoid(g.bottomRows(H));
      const Matrix c = gates.middleRows(H, H).cwiseProduct(c_prev) +
                       gates.topRows(H).cwiseProduct(gates.middleRows(2 * H, H));
      const Matrix ct = c.array().tanh();
      tr.cell.middleCols(s * B, B) = c;
      tr.cell_tanh.middleCols(s * B, B) = ct;
      tr.hidden.middleCols(s * B, B) = gates.bottomRows(H).cwiseProduct(ct);
      h_prev = tr.hidden.middleCols(s * B, B);
      c_prev = c;
    }
  }
  pass.latent = params.latent_w * pass.lstm.back().hidden;
  pass.latent.colwise() += params.latent_b.col(0);
}

void regress_into(const TrackerParams& params, ForwardPass& pass) {
  const TrackerConfig& cfg = params.config;
  const int B = pass.batch;
  const int S = pass.steps;
  const int N = B * S;
  const int L = cfg.latent;
  pass.reg_input.resize(L + 2, N);
  pass.reg_hidden.resize(cfg.regressor_hidden, N);
  pass.reg_out.resize(2, N);
  pass.estimate.resize(2, N);
  for (int s = 0; s < S; ++s) {
    auto in = pass.reg_input.middleCols(s * B, B);
    in.topRows(L) = pass.latent.middleCols(s * B, B);
    if (s == 0) {
      in.bottomRows(2).setZero();
    } else {
      in.bottomRows(2) = pass.estimate.middleCols((s - 1) * B, B);
    }
    Matrix h = params.reg1_w * in;
    h.colwise() += params.reg1_b.col(0);
    pass.reg_hidden.middleCols(s * B, B) = h.array().tanh();
    Matrix out = params.reg2_w * pass.reg_hidden.middleCols(s * B, B);
    out.colwise() += params.reg2_b.col(0);
    pass.reg_out.middleCols(s * B, B) = out;
    apply_head(out, cfg.head, pass.estimate.middleCols(s * B, B));
  }
}

}  // namespace

std::string_view head_name(Head head) { return head == Head::kPolar ? "polar" : "cartesian"; }

Head parse_head(std::string_view name) {
  if (name == "cartesian") return Head::kCartesian;
  if (name == "polar") return Head::kPolar;
  throw ConfigError("unknown head '" + std::string(name) + "' (expected cartesian or polar)");
}

void TrackerConfig::validate() const {
  if (channels < 1 || window < 1 || kernel < 1 || stride < 1 || conv1_channels < 1 ||
      conv2_channels < 1 || hidden < 1 || lstm_layers < 1 || latent < 1 || regressor_hidden < 1) {
    throw ConfigError("tracker sizes must be positive");
  }
  if (window < kernel || conv1_length() < kernel) {
    throw ConfigError("window too short for two convolution layers");
  }
  if (!(leaky_slope >= 0.0)) throw ConfigError("leaky_slope must be non-negative");
}

TrackerParams TrackerParams::zeros(const TrackerConfig& config) {
  config.validate();
  TrackerParams p;
  p.config = config;
  const int K = config.kernel;
  const int H = config.hidden;
  p.conv1_w = Matrix::Zero(config.conv1_channels, config.channels * K);
  p.conv1_b = Matrix::Zero(config.conv1_channels, 1);
  p.conv2_w = Matrix::Zero(config.conv2_channels, config.conv1_channels * K);
  p.conv2_b = Matrix::Zero(config.conv2_channels, 1);
  p.lstm.resize(static_cast<std::size_t>(config.lstm_layers));
  for (int l = 0; l < config.lstm_layers; ++l) {
    const int in = l == 0 ? config.flat_size() : H;
    p.lstm[static_cast<std::size_t>(l)] = {Matrix::Zero(4 * H, in), Matrix::Zero(4 * H, H),
                                           Matrix::Zero(4 * H, 1)};
  }
  p.latent_w = Matrix::Zero(config.latent, H);
  p.latent_b = Matrix::Zero(config.latent, 1);
  p.reg1_w = Matrix::Zero(config.regressor_hidden, config.latent + 2);
  p.reg1_b = Matrix::Zero(config.regressor_hidden, 1);
  p.reg2_w = Matrix::Zero(2, config.regressor_hidden);
  p.reg2_b = Matrix::Zero(2, 1);
  return p;
}

TrackerParams TrackerParams::initialize(const TrackerConfig& config, std::uint64_t seed) {
  TrackerParams p = zeros(config);
  std::mt19937_64 rng(seed);
  auto xavier = [&](Matrix& w, double fan_in, double fan_out) {
    fill_uniform(w, std::sqrt(6.0 / (fan_in + fan_out)), rng);
  };
  const int K = config.kernel;
  xavier(p.conv1_w, config.channels * K, config.conv1_channels * K);
  xavier(p.conv2_w, config.conv1_channels * K, config.conv2_channels * K);
  const double lstm_limit = 1.0 / std::sqrt(static_cast<double>(config.hidden));
  for (auto& layer : p.lstm) {
    fill_uniform(layer.wx, lstm_limit, rng);
    fill_uniform(layer.wh, lstm_limit, rng);
    layer.b.middleRows(config.hidden, config.hidden).setOnes();  // forget gate
  }
  xavier(p.latent_w, config.hidden, config.latent);
  xavier(p.reg1_w, config.latent + 2, config.regressor_hidden);
  xavier(p.reg2_w, config.regressor_hidden, 2);
  return p;
}

std::size_t TrackerParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool TrackerParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

void TrackerParams::scale(double s) {
  visit([&](const std::string&, Matrix& m) { m *= s; });
}

void TrackerParams::add_scaled(const TrackerParams& other, double s) {
  std::vector<const Matrix*> theirs;
  other.visit([&](const std::string&, const Matrix& m) { theirs.push_back(&m); });
  std::size_t k = 0;
  visit([&](const std::string&, Matrix& m) { m += s * *theirs[k++]; });
}

double TrackerParams::squared_norm() const {
  double acc = 0.0;
  visit([&](const std::string&, const Matrix& m) { acc += m.squaredNorm(); });
  return acc;
}

bool TrackerParams::same_shape(const TrackerParams& other) const {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> a;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> b;
  visit([&](const std::string&, const Matrix& m) { a.emplace_back(m.rows(), m.cols()); });
  other.visit([&](const std::string&, const Matrix& m) { b.emplace_back(m.rows(), m.cols()); });
  return a == b;
}

void WindowBatch::validate() const {
  if (batch < 1 || steps < 1 || window < 1 || channels < 1) {
    throw ArgumentError("window batch dimensions must be positive");
  }
  if (inputs.rows() != static_cast<Eigen::Index>(batch) * steps * window ||
      inputs.cols() != channels) {
    throw ArgumentError("window batch inputs have the wrong shape");
  }
  if (labels.size() != 0 && (labels.rows() != rows() || labels.cols() != 2)) {
    throw ArgumentError("window batch labels have the wrong shape");
  }
}

Matrix ForwardPass::latents() const { return columns_to_rows(latent, batch, steps); }

Matrix ForwardPass::estimates() const { return columns_to_rows(estimate, batch, steps); }

ForwardPass forward(const TrackerParams& params, const WindowBatch& batch) {
  ForwardPass pass;
  encode_into(params, batch, pass);
  regress_into(params, pass);
  return pass;
}

LatentBatch encode(const TrackerParams& params, const WindowBatch& batch) {
  ForwardPass pass;
  encode_into(params, batch, pass);
  LatentBatch out;
  out.values = pass.latents();
  out.origin.reserve(static_cast<std::size_t>(batch.rows()));
  for (int b = 0; b < batch.batch; ++b) {
    for (int s = 0; s < batch.steps; ++s) out.origin.emplace_back(b, s);
  }
  return out;
}

Matrix regress_step(const TrackerParams& params, const Matrix& latents, const Matrix& prev_estimates) {
  const TrackerConfig& cfg = params.config;
  if (latents.cols() != cfg.latent || prev_estimates.cols() != 2 ||
      latents.rows() != prev_estimates.rows()) {
    throw ArgumentError("regress_step shapes do not match");
  }
  Matrix in(cfg.latent + 2, latents.rows());
  in.topRows(cfg.latent) = latents.transpose();
  in.bottomRows(2) = prev_estimates.transpose();
  Matrix h = params.reg1_w * in;
  h.colwise() += params.reg1_b.col(0);
  h = h.array().tanh();
  Matrix out = params.reg2_w * h;
  out.colwise() += params.reg2_b.col(0);
  Matrix est(2, out.cols());
  apply_head(out, cfg.head, est);
  return est.transpose();
}

Matrix regress(const TrackerParams& params, const Matrix& latents, int batch, int steps) {
  if (latents.rows() != static_cast<Eigen::Index>(batch) * steps) {
    throw ArgumentError("latent rows do not match batch * steps");
  }
  Matrix out(latents.rows(), 2);
  for (int b = 0; b < batch; ++b) {
    Matrix prev = Matrix::Zero(1, 2);
    for (int s = 0; s < steps; ++s) {
      const int row = b * steps + s;
      prev = regress_step(params, latents.row(row), prev);
      out.row(row) = prev;
    }
  }
  return out;
}

double loss_mse(const Matrix& y, const Matrix& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) {
    throw ArgumentError("loss_mse shapes differ");
  }
  if (y.rows() == 0) throw ArgumentError("loss_mse needs at least one sample");
  return (y - yhat).squaredNorm() / static_cast<double>(y.rows());
}

Matrix loss_mse_grad(const Matrix& y, const Matrix& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols() || y.rows() == 0) {
    throw ArgumentError("loss_mse_grad shapes differ or are empty");
  }
  return 2.0 * (yhat - y) / static_cast<double>(y.rows());
}

TrackerParams backward(const TrackerParams& params, const ForwardPass& pass,
                       const Matrix& d_estimates, const Matrix& d_latents) {
  const TrackerConfig& cfg = params.config;
  const int B = pass.batch;
  const int S = pass.steps;
  const int N = B * S;
  const int L = cfg.latent;
  const int H = cfg.hidden;
  const int K = cfg.kernel;
  const int stride = cfg.stride;
  const int L1 = cfg.conv1_length();
  const int L2 = cfg.conv2_length();

  TrackerParams g = TrackerParams::zeros(cfg);

  Matrix d_est = Matrix::Zero(2, N);
  if (d_estimates.size() != 0) {
    if (d_estimates.rows() != N || d_estimates.cols() != 2) {
      throw ArgumentError("estimate gradient has the wrong shape");
    }
    d_est = rows_to_columns(d_estimates, B, S);
  }
  Matrix d_lat = Matrix::Zero(L, N);
  if (d_latents.size() != 0) {
    if (d_latents.rows() != N || d_latents.cols() != L) {
      throw ArgumentError("latent gradient has the wrong shape");
    }
    d_lat = rows_to_columns(d_latents, B, S);
  }

  // Regressor, newest window first; the feedback input carries gradient back one step.
  Matrix carry = Matrix::Zero(2, B);
  for (int s = S - 1; s >= 0; --s) {
    Matrix d_out = d_est.middleCols(s * B, B) + carry;
    if (cfg.head == Head::kPolar) {
      const Eigen::ArrayXXd t = pass.estimate.middleCols(s * B, B).row(1).array() / std::numbers::pi;
      d_out.row(1) = (d_out.row(1).array() * std::numbers::pi * (1.0 - t.square())).matrix();
    }
    const auto hidden = pass.reg_hidden.middleCols(s * B, B);
    g.reg2_w.noalias() += d_out * hidden.transpose();
    g.reg2_b += d_out.rowwise().sum();
    const Matrix d_h =
        (params.reg2_w.transpose() * d_out).cwiseProduct((1.0 - hidden.array().square()).matrix());
    g.reg1_w.noalias() += d_h * pass.reg_input.middleCols(s * B, B).transpose();
    g.reg1_b += d_h.rowwise().sum();
    const Matrix d_in = params.reg1_w.transpose() * d_h;
    d_lat.middleCols(s * B, B) += d_in.topRows(L);
    carry = d_in.bottomRows(2);
  }

  // Latent projection.
  g.latent_w.noalias() += d_lat * pass.lstm.back().hidden.transpose();
  g.latent_b += d_lat.rowwise().sum();
  Matrix d_hidden_out = params.latent_w.transpose() * d_lat;

  // Stacked LSTM, top layer first.
  for (int l = static_cast<int>(params.lstm.size()) - 1; l >= 0; --l) {
    const LstmLayer& layer = params.lstm[static_cast<std::size_t>(l)];
    const ForwardPass::LstmTrace& tr = pass.lstm[static_cast<std::size_t>(l)];
    LstmLayer& gl = g.lstm[static_cast<std::size_t>(l)];
    Matrix d_gates(4 * H, N);
    Matrix dh_next = Matrix::Zero(H, B);
    Matrix dc_next = Matrix::Zero(H, B);
    for (int s = S - 1; s >= 0; --s) {
      const auto gates = tr.gates.middleCols(s * B, B);
      const Eigen::ArrayXXd i = gates.topRows(H).array();
      const Eigen::ArrayXXd f = gates.middleRows(H, H).array();
      const Eigen::ArrayXXd gg = gates.middleRows(2 * H, H).array();
      const Eigen::ArrayXXd o = gates.bottomRows(H).array();
      const Eigen::ArrayXXd ct = tr.cell_tanh.middleCols(s * B, B).array();
      const Eigen::ArrayXXd c_prev = s > 0 ? Eigen::ArrayXXd(tr.cell.middleCols((s - 1) * B, B))
                                           : Eigen::ArrayXXd::Zero(H, B);
      const Eigen::ArrayXXd dh = (d_hidden_out.middleCols(s * B, B) + dh_next).array();
      const Eigen::ArrayXXd dc = dh * o * (1.0 - ct.square()) + dc_next.array();
      auto dg = d_gates.middleCols(s * B, B);
      dg.topRows(H) = (dc * gg * i * (1.0 - i)).matrix();
      dg.middleRows(H, H) = (dc * c_prev * f * (1.0 - f)).matrix();
      dg.middleRows(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
      dg.bottomRows(H) = (dh * ct * o * (1.0 - o)).matrix();
      dc_next = (dc * f).matrix();
      dh_next = layer.wh.transpose() * dg;
      if (s > 0) gl.wh.noalias() += dg * tr.hidden.middleCols((s - 1) * B, B).transpose();
    }
    gl.wx.noalias() += d_gates * tr.input.transpose();
    gl.b += d_gates.rowwise().sum();
    d_hidden_out = layer.wx.transpose() * d_gates;
  }

  // Convolutions. d_hidden_out is now the gradient of the flattened conv output.
  const int C1 = cfg.conv1_channels;
  const int C2 = cfg.conv2_channels;
  const Matrix d_act2 = Eigen::Map<const Matrix>(d_hidden_out.data(), C2,
                                                 static_cast<Eigen::Index>(N) * L2);
  const Matrix d_pre2 = d_act2.cwiseProduct(leaky_grad(pass.pre2, cfg.leaky_slope));
  g.conv2_w.noalias() += d_pre2 * pass.patches2.transpose();
  g.conv2_b += d_pre2.rowwise().sum();
  const Matrix d_patches2 = params.conv2_w.transpose() * d_pre2;
  Matrix d_act1 = Matrix::Zero(C1, static_cast<Eigen::Index>(N) * L1);
  for (int n = 0; n < N; ++n) {
    for (int p = 0; p < L2; ++p) {
      const auto col = d_patches2.col(static_cast<Eigen::Index>(n) * L2 + p);
      for (int ch = 0; ch < C1; ++ch) {
        for (int k = 0; k < K; ++k) {
          d_act1(ch, static_cast<Eigen::Index>(n) * L1 + p * stride + k) += col[ch * K + k];
        }
      }
    }
  }
  const Matrix d_pre1 = d_act1.cwiseProduct(leaky_grad(pass.pre1, cfg.leaky_slope));
  g.conv1_w.noalias() += d_pre1 * pass.patches1.transpose();
  g.conv1_b += d_pre1.rowwise().sum();
  return g;
}

Trajectory2D integrate_estimates(const Matrix& estimates, Head head, const Pose2D& initial_pose) {
  if (estimates.size() != 0 && estimates.cols() != 2) {
    throw ArgumentError("estimates must have two columns");
  }
  Trajectory2D traj;
  traj.has_heading = head == Head::kPolar;
  traj.poses.reserve(static_cast<std::size_t>(estimates.rows()) + 1);
  Pose2D pose = initial_pose;
  pose.phi = wrap_angle(pose.phi);
  traj.poses.push_back(pose);
  for (Eigen::Index s = 0; s < estimates.rows(); ++s) {
    if (head == Head::kCartesian) {
      pose.x += estimates(s, 0);
      pose.y += estimates(s, 1);
    } else {
      pose.phi = wrap_angle(pose.phi + estimates(s, 1));
      pose.x += estimates(s, 0) * std::cos(pose.phi);
      pose.y += estimates(s, 0) * std::sin(pose.phi);
    }
    traj.poses.push_back(pose);
  }
  return traj;
}

InputScaler InputScaler::identity(int channels) {
  return {Eigen::VectorXd::Zero(channels), Eigen::VectorXd::Ones(channels)};
}

}  // namespace imuot
