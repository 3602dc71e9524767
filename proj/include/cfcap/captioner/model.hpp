// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "cfcap/common.hpp"
#include "cfcap/scene.hpp"

namespace cfcap::captioner {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

struct ModelConfig {
  int vocab_size = 20;  // output vocabulary V; the decoder also owns a BOS row
  TokenId eos_token = 0;
  int num_cell_ids = 14;  // background + mask + objects
  int grid_height = 4;
  int grid_width = 4;
  int embed_dim = 32;
  int num_heads = 2;
  int attention_dim = 32;
  int hidden_dim = 64;
  int max_length = 20;

  void validate() const;
  int head_dim() const { return embed_dim / num_heads; }
  int grid_cells() const { return grid_height * grid_width; }
  bool operator==(const ModelConfig&) const = default;
};

// Trainable tensors in canonical order. The flat parameter vector is laid
// out in exactly this order, row-major within each tensor.
enum class Tensor : int {
  kTokenEmbed,     // (V+1) x D, last row is BOS
  kPositionEmbed,  // max_length x D
  kCellEmbed,      // num_cell_ids x D
  kCellPosition,   // grid_cells x D
  kQuery,          // D x D
  kKey,            // D x D
  kValue,          // D x D
  kAttnOut,        // D x D
  kCtxKey,         // D x A, projects cell features
  kCtxQuery,       // D x A, projects decoder state
  kCtxScore,       // 1 x A
  kHiddenW,        // 2D x H
  kHiddenB,        // 1 x H
  kOutW,           // H x V
  kOutB,           // 1 x V
};
inline constexpr int kNumTensors = 15;

struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
};

std::vector<TensorSlot> tensor_layout(const ModelConfig& config);

// Parameter container. Also used for gradients, which share the layout.
class ModelParams {
 public:
  ModelParams() : ModelParams(ModelConfig{}) {}
  explicit ModelParams(const ModelConfig& config);  // all zeros

  // Scaled-normal initialization, deterministic in `seed`.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<TensorSlot>& layout() const { return layout_; }
  const TensorSlot& slot(Tensor t) const { return layout_[static_cast<int>(t)]; }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  std::size_t size() const { return values_.size(); }

  MatrixMap tensor(Tensor t);
  ConstMatrixMap tensor(Tensor t) const;

  void set_zero();
  // this += scale * other
  void add_scaled(const ModelParams& other, double scale);
  double squared_norm() const;

  bool operator==(const ModelParams& o) const {
    return config_ == o.config_ && values_ == o.values_;
  }

 private:
  ModelConfig config_;
  std::vector<TensorSlot> layout_;
  std::vector<double> values_;
};

// Log-probabilities over the output vocabulary at one decoding step.
struct TokenDistribution {
  Vector log_probs;

  double log_prob(TokenId t) const { return log_probs(t); }
  double prob(TokenId t) const;
  int size() const { return static_cast<int>(log_probs.size()); }
};

// Activations of one teacher-forced pass. Row t of every per-position
// matrix corresponds to decoder input t (BOS for t = 0, prefix[t-1] after).
struct ForwardCache {
  std::vector<TokenId> inputs;  // BOS id followed by the prefix tokens
  Matrix x;                     // n x D embeddings
  Matrix q, k, v;               // n x D
  std::vector<Matrix> attn;     // per head, n x n
  Matrix mixed;                 // n x D, concatenated head outputs
  Matrix state;                 // n x D, x + mixed * W_o
  Matrix features;              // N x D cell features
  Matrix feature_keys;          // N x A
  std::vector<Matrix> energy;   // per position, N x A (tanh)
  Matrix cell_weights;          // n x N
  Matrix context;               // n x D
  Matrix hidden;                // n x H (tanh)
  Matrix log_probs;             // n x V
};

// Cell features: cell embedding plus a learned per-position embedding.
Matrix cell_features(const ModelParams& params, const SceneImage& image);

// Runs the decoder over BOS + prefix and returns activations for
// prefix.size() + 1 positions. Validates inputs.
ForwardCache run_forward(const ModelParams& params, const SceneImage& image,
                         std::span<const TokenId> prefix);

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits), one row
// per position of `cache`.
void run_backward(const ModelParams& params, const SceneImage& image,
                  const ForwardCache& cache, const Matrix& dlogits,
                  ModelParams& grad);

// f_theta(. | image, prefix)
TokenDistribution forward(const ModelParams& params, const SceneImage& image,
                          std::span<const TokenId> prefix);

// Log-probability rows for every position of a teacher-forced sequence:
// row i scores tokens[i] given tokens[0, i).
Matrix teacher_forced_log_probs(const ModelParams& params,
                                const SceneImage& image,
                                std::span<const TokenId> tokens);

double sequence_log_prob(const ModelParams& params, const SceneImage& image,
                         std::span<const TokenId> tokens);

// Gradient of sequence_log_prob with respect to every parameter.
ModelParams sequence_log_prob_gradient(const ModelParams& params,
                                       const SceneImage& image,
                                       std::span<const TokenId> tokens);

// Scoring interface consumed by decoding, counterfactual captioning and the
// interpretability probes. Lets hand-built oracle models stand in for the
// neural captioner.
class CaptionModel {
 public:
  virtual ~CaptionModel() = default;
  virtual int vocab_size() const = 0;
  virtual TokenId eos() const = 0;
  virtual int max_length() const = 0;
  // prefix.size() + 1 rows; row i is the next-token log-distribution after
  // prefix[0, i).
  virtual Matrix log_prob_rows(const SceneImage& image,
                               std::span<const TokenId> prefix) const = 0;

  TokenDistribution next(const SceneImage& image,
                         std::span<const TokenId> prefix) const;
  double score(const SceneImage& image, std::span<const TokenId> tokens) const;
};

class NeuralCaptioner final : public CaptionModel {
 public:
  explicit NeuralCaptioner(const ModelParams& params) : params_(&params) {}

  int vocab_size() const override { return params_->config().vocab_size; }
  TokenId eos() const override { return params_->config().eos_token; }
  int max_length() const override { return params_->config().max_length; }
  Matrix log_prob_rows(const SceneImage& image,
                       std::span<const TokenId> prefix) const override;

  const ModelParams& params() const { return *params_; }

 private:
  const ModelParams* params_;
};

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace cfcap::captioner
