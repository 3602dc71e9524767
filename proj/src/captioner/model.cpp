// SPDX-License-Identifier: Apache-2.0
#include "cfcap/captioner/model.hpp"

#include <cmath>
#include <limits>

namespace cfcap::captioner {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(num_cell_ids, "num_cell_ids");
  positive(grid_height, "grid_height");
  positive(grid_width, "grid_width");
  positive(embed_dim, "embed_dim");
  positive(num_heads, "num_heads");
  positive(attention_dim, "attention_dim");
  positive(hidden_dim, "hidden_dim");
  positive(max_length, "max_length");
  if (embed_dim % num_heads != 0) {
    throw ConfigError("model.embed_dim must be divisible by model.num_heads");
  }
  if (eos_token < 0 || eos_token >= vocab_size) {
    throw ConfigError("model.eos_token outside the vocabulary");
  }
  if (num_cell_ids < kFirstObjectCell) {
    throw ConfigError("model.num_cell_ids must include background and mask");
  }
}

std::vector<TensorSlot> tensor_layout(const ModelConfig& c) {
  const int d = c.embed_dim;
  std::vector<TensorSlot> slots = {
      {"token_embed", c.vocab_size + 1, d},
      {"position_embed", c.max_length, d},
      {"cell_embed", c.num_cell_ids, d},
      {"cell_position", c.grid_cells(), d},
      {"attn_query", d, d},
      {"attn_key", d, d},
      {"attn_value", d, d},
      {"attn_out", d, d},
      {"ctx_key", d, c.attention_dim},
      {"ctx_query", d, c.attention_dim},
      {"ctx_score", 1, c.attention_dim},
      {"hidden_w", 2 * d, c.hidden_dim},
      {"hidden_b", 1, c.hidden_dim},
      {"out_w", c.hidden_dim, c.vocab_size},
      {"out_b", 1, c.vocab_size},
  };
  std::size_t offset = 0;
  for (auto& s : slots) {
    s.offset = offset;
    offset += static_cast<std::size_t>(s.rows) * s.cols;
  }
  return slots;
}

ModelParams::ModelParams(const ModelConfig& config)
    : config_(config), layout_(tensor_layout(config)) {
  config_.validate();
  const auto& last = layout_.back();
  values_.assign(last.offset + static_cast<std::size_t>(last.rows) * last.cols, 0.0);
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p(config);
  Rng rng(seed);
  auto fill = [&](Tensor t, double stddev) {
    auto m = p.tensor(t);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  };
  const double d = config.embed_dim;
  fill(Tensor::kTokenEmbed, 0.3);
  fill(Tensor::kPositionEmbed, 0.3);
  fill(Tensor::kCellEmbed, 0.3);
  fill(Tensor::kCellPosition, 0.3);
  fill(Tensor::kQuery, 1.0 / std::sqrt(d));
  fill(Tensor::kKey, 1.0 / std::sqrt(d));
  fill(Tensor::kValue, 1.0 / std::sqrt(d));
  fill(Tensor::kAttnOut, 0.5 / std::sqrt(d));
  fill(Tensor::kCtxKey, 1.0 / std::sqrt(d));
  fill(Tensor::kCtxQuery, 1.0 / std::sqrt(d));
  fill(Tensor::kCtxScore, 1.0 / std::sqrt(config.attention_dim));
  fill(Tensor::kHiddenW, 1.0 / std::sqrt(2.0 * d));
  fill(Tensor::kOutW, 0.5 / std::sqrt(static_cast<double>(config.hidden_dim)));
  return p;
}

MatrixMap ModelParams::tensor(Tensor t) {
  const auto& s = slot(t);
  return MatrixMap(values_.data() + s.offset, s.rows, s.cols);
}

ConstMatrixMap ModelParams::tensor(Tensor t) const {
  const auto& s = slot(t);
  return ConstMatrixMap(values_.data() + s.offset, s.rows, s.cols);
}

void ModelParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  if (other.values_.size() != values_.size()) {
    throw InputError("ModelParams::add_scaled: layout mismatch");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

double TokenDistribution::prob(TokenId t) const { return std::exp(log_probs(t)); }

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

namespace {

void softmax_inplace(Eigen::Ref<Eigen::RowVectorXd> row) {
  const double m = row.maxCoeff();
  row = (row.array() - m).exp();
  row /= row.sum();
}

void check_inputs(const ModelConfig& c, const SceneImage& image,
                  std::span<const TokenId> prefix) {
  if (static_cast<int>(prefix.size()) >= c.max_length) {
    throw CapacityError("prefix length " + std::to_string(prefix.size()) +
                        " reaches the maximum caption length " +
                        std::to_string(c.max_length));
  }
  for (TokenId t : prefix) {
    if (t < 0 || t >= c.vocab_size) {
      throw InputError("invalid token id " + std::to_string(t));
    }
  }
  if (image.height() != c.grid_height || image.width() != c.grid_width) {
    throw InputError("image grid does not match the model's grid size");
  }
  image.validate(c.num_cell_ids);
}

}  // namespace

Matrix cell_features(const ModelParams& params, const SceneImage& image) {
  const auto cell_embed = params.tensor(Tensor::kCellEmbed);
  Matrix f = params.tensor(Tensor::kCellPosition);
  for (int c = 0; c < image.size(); ++c) f.row(c) += cell_embed.row(image.at(c));
  return f;
}

ForwardCache run_forward(const ModelParams& params, const SceneImage& image,
                         std::span<const TokenId> prefix) {
  const ModelConfig& cfg = params.config();
  check_inputs(cfg, image, prefix);

  const int n = static_cast<int>(prefix.size()) + 1;
  const int d = cfg.embed_dim;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache c;
  c.inputs.reserve(n);
  c.inputs.push_back(cfg.vocab_size);  // BOS row
  c.inputs.insert(c.inputs.end(), prefix.begin(), prefix.end());

  const auto tok = params.tensor(Tensor::kTokenEmbed);
  const auto pos = params.tensor(Tensor::kPositionEmbed);
  c.x.resize(n, d);
  for (int t = 0; t < n; ++t) c.x.row(t) = tok.row(c.inputs[t]) + pos.row(t);

  c.q = c.x * params.tensor(Tensor::kQuery);
  c.k = c.x * params.tensor(Tensor::kKey);
  c.v = c.x * params.tensor(Tensor::kValue);
  c.mixed.resize(n, d);
  c.attn.resize(cfg.num_heads);
  for (int h = 0; h < cfg.num_heads; ++h) {
    Matrix s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    for (int i = 0; i < n; ++i) {
      auto row = s.row(i).head(i + 1);
      Eigen::RowVectorXd r = row;
      softmax_inplace(r);
      s.row(i).setZero();
      s.row(i).head(i + 1) = r;
    }
    c.mixed.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
    c.attn[h] = std::move(s);
  }
  c.state = c.x + c.mixed * params.tensor(Tensor::kAttnOut);

  c.features = cell_features(params, image);
  c.feature_keys = c.features * params.tensor(Tensor::kCtxKey);
  const Matrix query = c.state * params.tensor(Tensor::kCtxQuery);
  const auto score_vec = params.tensor(Tensor::kCtxScore);
  const int cells = image.size();
  c.energy.resize(n);
  c.cell_weights.resize(n, cells);
  for (int t = 0; t < n; ++t) {
    c.energy[t] = (c.feature_keys.rowwise() + query.row(t)).array().tanh();
    Eigen::RowVectorXd scores = (c.energy[t] * score_vec.transpose()).transpose();
    softmax_inplace(scores);
    c.cell_weights.row(t) = scores;
  }
  c.context = c.cell_weights * c.features;

  Matrix z(n, 2 * d);
  z.leftCols(d) = c.state;
  z.rightCols(d) = c.context;
  c.hidden = ((z * params.tensor(Tensor::kHiddenW)).rowwise() +
              params.tensor(Tensor::kHiddenB).row(0))
                 .array()
                 .tanh();
  const Matrix logits =
      (c.hidden * params.tensor(Tensor::kOutW)).rowwise() + params.tensor(Tensor::kOutB).row(0);
  c.log_probs = log_softmax_rows(logits);
  return c;
}

void run_backward(const ModelParams& params, const SceneImage& image,
                  const ForwardCache& c, const Matrix& dlogits, ModelParams& grad) {
  const ModelConfig& cfg = params.config();
  const int n = static_cast<int>(c.inputs.size());
  const int d = cfg.embed_dim;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dlogits.rows() != n || dlogits.cols() != cfg.vocab_size) {
    throw InputError("run_backward: dlogits shape mismatch");
  }

  // Output head.
  grad.tensor(Tensor::kOutW).noalias() += c.hidden.transpose() * dlogits;
  grad.tensor(Tensor::kOutB).row(0) += dlogits.colwise().sum();
  const Matrix dpre = (dlogits * params.tensor(Tensor::kOutW).transpose())
                          .cwiseProduct((1.0 - c.hidden.array().square()).matrix());

  Matrix z(n, 2 * d);
  z.leftCols(d) = c.state;
  z.rightCols(d) = c.context;
  grad.tensor(Tensor::kHiddenW).noalias() += z.transpose() * dpre;
  grad.tensor(Tensor::kHiddenB).row(0) += dpre.colwise().sum();
  const Matrix dz = dpre * params.tensor(Tensor::kHiddenW).transpose();
  Matrix dstate = dz.leftCols(d);
  const Matrix dctx = dz.rightCols(d);

  // Additive attention over cells.
  const int cells = static_cast<int>(c.features.rows());
  const auto score_vec = params.tensor(Tensor::kCtxScore);
  Matrix dfeatures = c.cell_weights.transpose() * dctx;
  Matrix dkeys = Matrix::Zero(cells, cfg.attention_dim);
  Matrix dquery(n, cfg.attention_dim);
  auto gscore = grad.tensor(Tensor::kCtxScore);
  for (int t = 0; t < n; ++t) {
    const Eigen::RowVectorXd w = c.cell_weights.row(t);
    const Eigen::RowVectorXd dw = dctx.row(t) * c.features.transpose();
    const Eigen::RowVectorXd dscore = w.array() * (dw.array() - w.dot(dw));
    const Matrix& e = c.energy[t];
    gscore.row(0) += dscore * e;
    const Matrix de = (dscore.transpose() * score_vec.row(0)).cwiseProduct(
        (1.0 - e.array().square()).matrix());
    dkeys += de;
    dquery.row(t) = de.colwise().sum();
  }
  grad.tensor(Tensor::kCtxQuery).noalias() += c.state.transpose() * dquery;
  dstate.noalias() += dquery * params.tensor(Tensor::kCtxQuery).transpose();
  grad.tensor(Tensor::kCtxKey).noalias() += c.features.transpose() * dkeys;
  dfeatures.noalias() += dkeys * params.tensor(Tensor::kCtxKey).transpose();
  auto gcell = grad.tensor(Tensor::kCellEmbed);
  for (int i = 0; i < cells; ++i) gcell.row(image.at(i)) += dfeatures.row(i);
  grad.tensor(Tensor::kCellPosition) += dfeatures;

  // Residual self-attention block.
  grad.tensor(Tensor::kAttnOut).noalias() += c.mixed.transpose() * dstate;
  const Matrix dmixed = dstate * params.tensor(Tensor::kAttnOut).transpose();
  Matrix dx = dstate;
  Matrix dq(n, d), dk(n, d), dv(n, d);
  for (int h = 0; h < cfg.num_heads; ++h) {
    const Matrix& p = c.attn[h];
    const auto dm = dmixed.middleCols(h * dh, dh);
    const Matrix dp = dm * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * dm;
    const Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
    const Matrix ds = p.cwiseProduct(dp.colwise() - rowdot) * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  grad.tensor(Tensor::kQuery).noalias() += c.x.transpose() * dq;
  grad.tensor(Tensor::kKey).noalias() += c.x.transpose() * dk;
  grad.tensor(Tensor::kValue).noalias() += c.x.transpose() * dv;
  dx.noalias() += dq * params.tensor(Tensor::kQuery).transpose();
  dx.noalias() += dk * params.tensor(Tensor::kKey).transpose();
  dx.noalias() += dv * params.tensor(Tensor::kValue).transpose();

  auto gtok = grad.tensor(Tensor::kTokenEmbed);
  auto gpos = grad.tensor(Tensor::kPositionEmbed);
  for (int t = 0; t < n; ++t) {
    gtok.row(c.inputs[t]) += dx.row(t);
    gpos.row(t) += dx.row(t);
  }
}

TokenDistribution forward(const ModelParams& params, const SceneImage& image,
                          std::span<const TokenId> prefix) {
  const ForwardCache c = run_forward(params, image, prefix);
  return TokenDistribution{c.log_probs.row(c.log_probs.rows() - 1).transpose()};
}

Matrix teacher_forced_log_probs(const ModelParams& params, const SceneImage& image,
                                std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("teacher_forced_log_probs: empty sequence");
  for (TokenId t : tokens) {
    if (t < 0 || t >= params.config().vocab_size) {
      throw InputError("invalid token id " + std::to_string(t));
    }
  }
  return run_forward(params, image, tokens.first(tokens.size() - 1)).log_probs;
}

double sequence_log_prob(const ModelParams& params, const SceneImage& image,
                         std::span<const TokenId> tokens) {
  const Matrix lp = teacher_forced_log_probs(params, image, tokens);
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) total += lp(i, tokens[i]);
  return total;
}

ModelParams sequence_log_prob_gradient(const ModelParams& params,
                                       const SceneImage& image,
                                       std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("sequence_log_prob_gradient: empty sequence");
  const ForwardCache c = run_forward(params, image, tokens.first(tokens.size() - 1));
  // d/dlogits of sum_i log p_i(tok_i) = onehot - p
  Matrix dl = -c.log_probs.array().exp().matrix();
  for (std::size_t i = 0; i < tokens.size(); ++i) dl(i, tokens[i]) += 1.0;
  ModelParams grad(params.config());
  run_backward(params, image, c, dl, grad);
  return grad;
}

TokenDistribution CaptionModel::next(const SceneImage& image,
                                     std::span<const TokenId> prefix) const {
  const Matrix rows = log_prob_rows(image, prefix);
  return TokenDistribution{rows.row(rows.rows() - 1).transpose()};
}

double CaptionModel::score(const SceneImage& image, std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw InputError("CaptionModel::score: empty sequence");
  const Matrix rows = log_prob_rows(image, tokens.first(tokens.size() - 1));
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) total += rows(i, tokens[i]);
  return total;
}

Matrix NeuralCaptioner::log_prob_rows(const SceneImage& image,
                                      std::span<const TokenId> prefix) const {
  return run_forward(*params_, image, prefix).log_probs;
}

}  // namespace cfcap::captioner
