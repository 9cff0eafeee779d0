// Mini bidirectional transformer encoder with masked-LM and
// next-sentence-prediction heads, written with explicit forward and backward
// passes.  Supports the two parameter-reduction switches: factorized token
// embeddings (embed < hidden) and cross-layer parameter sharing.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twlm/rng.hpp"
#include "twlm/tensor.hpp"
#include "twlm/vocab.hpp"

namespace twlm {

struct ModelConfig {
  std::int32_t vocab_size = 0;
  std::int32_t hidden = 0;
  std::int32_t embed = 0;  // embed == hidden means no factorization
  std::int32_t layers = 0;
  std::int32_t heads = 0;
  std::int32_t ff_dim = 0;
  std::int32_t max_positions = 0;
  bool share_layers = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  bool factorized() const { return embed < hidden; }
  void validate() const;  // throws UsageError naming the offending field
};

struct LayerParams {
  Tensor attn_q_w, attn_q_b;
  Tensor attn_k_w, attn_k_b;
  Tensor attn_v_w, attn_v_b;
  Tensor attn_out_w, attn_out_b;
  Tensor attn_ln_gain, attn_ln_bias;
  Tensor ffn_in_w, ffn_in_b;
  Tensor ffn_out_w, ffn_out_b;
  Tensor ffn_ln_gain, ffn_ln_bias;
};

// All trainable tensors.  With share_layers exactly one physical layer group
// exists and is applied `layers` times.
struct ParameterSet {
  Tensor token_embed;    // [V,E]
  Tensor embed_proj;     // [E,H], present iff factorized
  Tensor pos_embed;      // [P,H]
  Tensor segment_embed;  // [2,H]
  Tensor embed_ln_gain, embed_ln_bias;  // [H]
  std::vector<LayerParams> layers;
  Tensor mlm_transform_w, mlm_transform_b;  // [H,H],[H]
  Tensor mlm_output_bias;                   // [V]; rows remapped with vocab
  Tensor nsp_w, nsp_b;                      // [H,2],[2]
  Tensor pooler_w, pooler_b;                // [H,H],[H]

  // Visits every tensor in a fixed canonical order with a stable name
  // ("token_embed", "layer.0.attn_q_w", ...).  Serialization, optimizer
  // state and the gradient check all rely on this order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;

  bool all_finite() const;
};

// Truncated-normal(0, 0.02^2) weights clipped at 2 standard deviations,
// zero biases, unit layer-norm gains; deterministic per config.seed.
ParameterSet init_model(const ModelConfig& cfg);

// Zero tensors shaped like init_model(cfg); the gradient container.
ParameterSet zeros_like_params(const ModelConfig& cfg);

// Exact number of scalar parameters implied by the config.
std::int64_t param_count(const ModelConfig& cfg);

enum class ForwardMode { mlm_nsp, pooled, sequence };

struct Batch {
  std::vector<Encoding> encodings;  // equal lengths
  std::int64_t size() const { return static_cast<std::int64_t>(encodings.size()); }
  std::int64_t seq_len() const {
    return encodings.empty()
               ? 0
               : static_cast<std::int64_t>(encodings[0].ids.size());
  }
};

struct LayerNormCache {
  Tensor xhat;               // normalized rows
  std::vector<double> rstd;  // one per row
};

struct LayerCache {
  Tensor x_in;
  Tensor q, k, v;
  Tensor attn_probs;  // [B,A,T,T]
  Tensor ctx;
  Tensor attn_branch;  // residual branch after out-proj (+ dropout)
  Tensor drop_attn;
  LayerNormCache ln1;
  Tensor x_mid;
  Tensor ffn_pre;  // pre-activation [B,T,F]
  Tensor ffn_act;
  Tensor ffn_branch;
  Tensor drop_ffn;
  LayerNormCache ln2;
  Tensor x_out;
};

struct ForwardCache {
  Batch batch;
  Tensor emb_sum;  // pre-layer-norm embedding sum
  LayerNormCache emb_ln;
  Tensor drop_emb;
  Tensor emb_out;
  std::vector<LayerCache> layers;  // one per application, even when shared
  Tensor mlm_pre, mlm_act;         // MLM transform (mlm_nsp mode)
  Tensor pooled_pre, pooled;       // pooler (mlm_nsp / pooled modes)
};

struct ForwardOut {
  Tensor sequence;    // [B,T,H]
  Tensor pooled;      // [B,H]
  Tensor mlm_logits;  // [B,T,V]
  Tensor nsp_logits;  // [B,2]
};

/// Post-layer-norm encoder.  Padded positions receive a large negative
/// attention bias, so their content cannot influence unpadded outputs.
/// Dropout runs only when dropout_rng is supplied and cfg.dropout > 0.
ForwardOut forward(const ModelConfig& cfg, const ParameterSet& params,
                   const Batch& batch, ForwardMode mode,
                   ForwardCache* cache = nullptr, Rng* dropout_rng = nullptr);

// Upstream gradients for backward(); any subset may be present.
struct UpstreamGrads {
  const Tensor* d_sequence = nullptr;
  const Tensor* d_pooled = nullptr;
  const Tensor* d_mlm_logits = nullptr;
  const Tensor* d_nsp_logits = nullptr;
};

// Exact reverse pass over a cached forward.  With share_layers the shared
// tensors accumulate gradient over every application.
ParameterSet backward(const ModelConfig& cfg, const ParameterSet& params,
                      const ForwardCache& cache, const UpstreamGrads& up);

struct LossBreakdown {
  double mlm = 0.0;
  double nsp = 0.0;
  double total = 0.0;
  std::int64_t masked_positions = 0;
  std::int64_t nsp_examples = 0;
};

/// Mean cross-entropy over masked positions plus, when any NSP label is
/// present, mean NSP cross-entropy.  mlm_labels is row-major [B,T] with -1
/// as the ignore marker; nsp_labels holds one label in {0,1} per sequence
/// or -1 when absent.  Throws NumericError if the batch carries no signal.
LossBreakdown mlm_nsp_loss_and_grads(
    const ModelConfig& cfg, const ParameterSet& params, const Batch& batch,
    const std::vector<std::int32_t>& mlm_labels,
    const std::vector<std::int32_t>& nsp_labels, ParameterSet* grads,
    Rng* dropout_rng = nullptr);

// Numerically stable softmax cross-entropy of one logit row against a label.
double cross_entropy_row(const double* logits, std::int64_t n,
                         std::int32_t label);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::int64_t step = 0;
  ParameterSet m, v;

  static AdamState init(const ModelConfig& cfg);
};

// Decoupled-weight-decay Adam with bias-corrected moments.  Throws
// NumericError on non-finite gradients.
void adamw_step(ParameterSet& params, const ParameterSet& grads,
                AdamState& state, const AdamHyper& hyper);

// Single-tensor Adam update used for auxiliary tensors (task heads).
void adamw_update_tensor(Tensor& param, const Tensor& grad, Tensor& m,
                         Tensor& v, std::int64_t step, const AdamHyper& hyper);

double gelu(double x);
double gelu_grad(double x);

}  // namespace twlm
