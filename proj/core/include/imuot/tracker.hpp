#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "imuot/pose.hpp"

namespace imuot {

using Matrix = Eigen::MatrixXd;

enum class Head { kCartesian, kPolar };

std::string_view head_name(Head head);
Head parse_head(std::string_view name);

struct TrackerConfig {
  int channels = 9;
  int window = 35;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int kernel = 5;
  int stride = 2;
  int hidden = 64;
  int lstm_layers = 2;
  int latent = 32;
  int regressor_hidden = 32;
  double leaky_slope = 0.01;
  Head head = Head::kCartesian;

  int conv1_length() const { return (window - kernel) / stride + 1; }
  int conv2_length() const { return (conv1_length() - kernel) / stride + 1; }
  int flat_size() const { return conv2_channels * conv2_length(); }
  void validate() const;
};

struct LstmLayer {
  Matrix wx;  // 4H x input, gate order (input, forget, cell, output)
  Matrix wh;  // 4H x H
  Matrix b;   // 4H x 1
};

// All trainable weights. The same type holds gradients and optimizer moments.
struct TrackerParams {
  TrackerConfig config;
  Matrix conv1_w;  // c1 x (channels * kernel), column = channel * kernel + tap
  Matrix conv1_b;
  Matrix conv2_w;  // c2 x (c1 * kernel)
  Matrix conv2_b;
  std::vector<LstmLayer> lstm;
  Matrix latent_w;  // latent x hidden
  Matrix latent_b;
  Matrix reg1_w;  // regressor_hidden x (latent + 2)
  Matrix reg1_b;
  Matrix reg2_w;  // 2 x regressor_hidden
  Matrix reg2_b;

  static TrackerParams zeros(const TrackerConfig& config);
  static TrackerParams initialize(const TrackerConfig& config, std::uint64_t seed);

  template <class F>
  void visit(F&& f) {
    f("conv1_w", conv1_w);
    f("conv1_b", conv1_b);
    f("conv2_w", conv2_w);
    f("conv2_b", conv2_b);
    for (std::size_t l = 0; l < lstm.size(); ++l) {
      const std::string p = "lstm" + std::to_string(l) + "_";
      f(p + "wx", lstm[l].wx);
      f(p + "wh", lstm[l].wh);
      f(p + "b", lstm[l].b);
    }
    f("latent_w", latent_w);
    f("latent_b", latent_b);
    f("reg1_w", reg1_w);
    f("reg1_b", reg1_b);
    f("reg2_w", reg2_w);
    f("reg2_b", reg2_b);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<TrackerParams*>(this)->visit(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
  void scale(double s);
  void add_scaled(const TrackerParams& other, double s);
  double squared_norm() const;
  bool same_shape(const TrackerParams& other) const;
};

// B sequences of S windows of W samples with C channels.
struct WindowBatch {
  int batch = 0;
  int steps = 0;
  int window = 0;
  int channels = 0;
  Matrix inputs;  // (batch * steps * window) x channels, row = (b * steps + s) * window + w
  Matrix labels;  // (batch * steps) x 2, row = b * steps + s
  std::vector<int> domain_tags;

  int rows() const { return batch * steps; }
  void validate() const;
};

struct LatentBatch {
  Matrix values;  // (batch * steps) x latent, row = b * steps + s
  std::vector<std::pair<int, int>> origin;  // (sequence, window) per row
};

// Intermediates of one forward pass, kept for the backward pass.
// Window columns are step-major: n = s * batch + b.
struct ForwardPass {
  int batch = 0;
  int steps = 0;
  Matrix patches1, pre1, act1;
  Matrix patches2, pre2, act2;
  struct LstmTrace {
    Matrix input;  // in x N
    Matrix gates;  // 4H x N, post-activation
    Matrix cell;   // H x N
    Matrix cell_tanh;
    Matrix hidden;
  };
  std::vector<LstmTrace> lstm;
  Matrix latent;      // L x N
  Matrix reg_input;   // (L + 2) x N
  Matrix reg_hidden;  // Rh x N, post-tanh
  Matrix reg_out;     // 2 x N, pre-head
  Matrix estimate;    // 2 x N

  // Row-major (b * steps + s) views for callers.
  Matrix latents() const;
  Matrix estimates() const;
};

ForwardPass forward(const TrackerParams& params, const WindowBatch& batch);

LatentBatch encode(const TrackerParams& params, const WindowBatch& batch);

// One regressor step: rows of `latents` paired with rows of `prev_estimates`.
Matrix regress_step(const TrackerParams& params, const Matrix& latents, const Matrix& prev_estimates);

// Runs the regressor over whole sequences, feeding each estimate into the next window.
// `latents` rows are ordered b * steps + s.
Matrix regress(const TrackerParams& params, const Matrix& latents, int batch, int steps);

double loss_mse(const Matrix& y, const Matrix& yhat);
// d loss_mse / d yhat
Matrix loss_mse_grad(const Matrix& y, const Matrix& yhat);

// Reverse-mode gradients given upstream gradients on the estimates and latents
// (both in row order b * steps + s; pass an empty matrix for "no gradient").
TrackerParams backward(const TrackerParams& params, const ForwardPass& pass,
                       const Matrix& d_estimates, const Matrix& d_latents);

// Per-window estimates (S x 2) chained into S + 1 poses.
Trajectory2D integrate_estimates(const Matrix& estimates, Head head, const Pose2D& initial_pose);

// Per-channel standardisation applied when windows are built.
struct InputScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static InputScaler identity(int channels);
};

struct Checkpoint {
  TrackerParams params;
  InputScaler scaler;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace imuot
