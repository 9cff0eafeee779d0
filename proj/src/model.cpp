#include "twlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "twlm/error.hpp"

namespace twlm {

namespace {

constexpr double kLayerNormEps = 1e-12;
constexpr double kMaskBias = -1e30;
constexpr double kInitStd = 0.02;
constexpr double kInitTrunc = 2.0;

// GELU tanh approximation, the BERT variant: the coefficients below are
// sqrt(2/pi) and the cubic correction 0.044715.
constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluA = 0.044715;

void linear_forward(const double* x, std::int64_t n, std::int64_t in,
                    const Tensor& w, const Tensor& b, double* y) {
  const std::int64_t out = w.shape[1];
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t o = 0; o < out; ++o) y[r * out + o] = b.at(o);
    for (std::int64_t i = 0; i < in; ++i) {
      const double xv = x[r * in + i];
      if (xv == 0.0) continue;
      const double* wrow = w.data.data() + i * out;
      double* yrow = y + r * out;
      for (std::int64_t o = 0; o < out; ++o) yrow[o] += xv * wrow[o];
    }
  }
}

void linear_backward(const double* x, const double* dy, std::int64_t n,
                     std::int64_t in, const Tensor& w, Tensor& dw, Tensor& db,
                     double* dx) {
  const std::int64_t out = w.shape[1];
  for (std::int64_t r = 0; r < n; ++r) {
    const double* dyrow = dy + r * out;
    for (std::int64_t o = 0; o < out; ++o) db.at(o) += dyrow[o];
    for (std::int64_t i = 0; i < in; ++i) {
      const double xv = x[r * in + i];
      const double* wrow = w.data.data() + i * out;
      double* dwrow = dw.data.data() + i * out;
      double acc = 0.0;
      for (std::int64_t o = 0; o < out; ++o) {
        acc += dyrow[o] * wrow[o];
        dwrow[o] += xv * dyrow[o];
      }
      if (dx) dx[r * in + i] += acc;
    }
  }
}

void layer_norm_forward(const double* x, std::int64_t rows, std::int64_t h,
                        const Tensor& gain, const Tensor& bias,
                        LayerNormCache& cache, double* y) {
  cache.xhat = Tensor::zeros({rows, h});
  cache.rstd.assign(static_cast<std::size_t>(rows), 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * h;
    double mean = 0.0;
    for (std::int64_t i = 0; i < h; ++i) mean += xr[i];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::int64_t i = 0; i < h; ++i) {
      const double d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(h);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[static_cast<std::size_t>(r)] = rstd;
    for (std::int64_t i = 0; i < h; ++i) {
      const double xh = (xr[i] - mean) * rstd;
      cache.xhat.at(r, i) = xh;
      y[r * h + i] = gain.at(i) * xh + bias.at(i);
    }
  }
}

void layer_norm_backward(const double* dy, std::int64_t rows, std::int64_t h,
                         const Tensor& gain, const LayerNormCache& cache,
                         Tensor& dgain, Tensor& dbias, double* dx) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* dyr = dy + r * h;
    const double rstd = cache.rstd[static_cast<std::size_t>(r)];
    double m1 = 0.0;  // mean of dxhat
    double m2 = 0.0;  // mean of dxhat * xhat
    for (std::int64_t i = 0; i < h; ++i) {
      const double xh = cache.xhat.at(r, i);
      dgain.at(i) += dyr[i] * xh;
      dbias.at(i) += dyr[i];
      const double dxh = dyr[i] * gain.at(i);
      m1 += dxh;
      m2 += dxh * xh;
    }
    m1 /= static_cast<double>(h);
    m2 /= static_cast<double>(h);
    for (std::int64_t i = 0; i < h; ++i) {
      const double xh = cache.xhat.at(r, i);
      const double dxh = dyr[i] * gain.at(i);
      dx[r * h + i] += rstd * (dxh - m1 - xh * m2);
    }
  }
}

void softmax_row(double* row, std::int64_t n) {
  double mx = row[0];
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    sum += row[i];
  }
  for (std::int64_t i = 0; i < n; ++i) row[i] /= sum;
}

// Inverted dropout; mask entries are 0 or 1/(1-p).
void apply_dropout(Tensor& x, double p, Rng* rng, Tensor& mask_out) {
  if (!rng || p <= 0.0) return;
  mask_out = Tensor::zeros(x.shape);
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double keep = rng->uniform01() < p ? 0.0 : scale;
    mask_out.data[i] = keep;
    x.data[i] *= keep;
  }
}

void dropout_backward(Tensor& d, const Tensor& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= mask.data[i];
}

// The MLM output weights are the token embedding (through the projection
// when factorized); returns the effective [V,H] matrix.
Tensor tied_output_matrix(const ModelConfig& cfg, const ParameterSet& p) {
  if (!cfg.factorized()) return p.token_embed;
  Tensor tied = Tensor::zeros({cfg.vocab_size, cfg.hidden});
  for (std::int64_t v = 0; v < cfg.vocab_size; ++v) {
    for (std::int64_t e = 0; e < cfg.embed; ++e) {
      const double te = p.token_embed.at(v, e);
      if (te == 0.0) continue;
      for (std::int64_t h = 0; h < cfg.hidden; ++h) {
        tied.at(v, h) += te * p.embed_proj.at(e, h);
      }
    }
  }
  return tied;
}

}  // namespace

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void ModelConfig::validate() const {
  const auto require = [](bool ok, const std::string& field,
                          const std::string& why) {
    if (!ok) throw UsageError("invalid config field " + field + ": " + why);
  };
  require(vocab_size >= 5, "vocab_size", "must cover the 5 special tokens");
  require(hidden >= 1, "hidden", "must be >= 1");
  require(embed >= 1, "embed", "must be >= 1");
  require(embed <= hidden, "embed", "must be <= hidden");
  require(layers >= 1, "layers", "must be >= 1");
  require(heads >= 1, "heads", "must be >= 1");
  require(hidden % heads == 0, "heads", "must divide hidden");
  require(ff_dim >= 1, "ff_dim", "must be >= 1");
  require(max_positions >= 1, "max_positions", "must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must be in [0,1)");
}

void ParameterSet::for_each(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("token_embed", token_embed);
  if (!embed_proj.empty()) fn("embed_proj", embed_proj);
  fn("pos_embed", pos_embed);
  fn("segment_embed", segment_embed);
  fn("embed_ln_gain", embed_ln_gain);
  fn("embed_ln_bias", embed_ln_bias);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    fn(p + "attn_q_w", lp.attn_q_w);
    fn(p + "attn_q_b", lp.attn_q_b);
    fn(p + "attn_k_w", lp.attn_k_w);
    fn(p + "attn_k_b", lp.attn_k_b);
    fn(p + "attn_v_w", lp.attn_v_w);
    fn(p + "attn_v_b", lp.attn_v_b);
    fn(p + "attn_out_w", lp.attn_out_w);
    fn(p + "attn_out_b", lp.attn_out_b);
    fn(p + "attn_ln_gain", lp.attn_ln_gain);
    fn(p + "attn_ln_bias", lp.attn_ln_bias);
    fn(p + "ffn_in_w", lp.ffn_in_w);
    fn(p + "ffn_in_b", lp.ffn_in_b);
    fn(p + "ffn_out_w", lp.ffn_out_w);
    fn(p + "ffn_out_b", lp.ffn_out_b);
    fn(p + "ffn_ln_gain", lp.ffn_ln_gain);
    fn(p + "ffn_ln_bias", lp.ffn_ln_bias);
  }
  fn("mlm_transform_w", mlm_transform_w);
  fn("mlm_transform_b", mlm_transform_b);
  fn("mlm_output_bias", mlm_output_bias);
  fn("nsp_w", nsp_w);
  fn("nsp_b", nsp_b);
  fn("pooler_w", pooler_w);
  fn("pooler_b", pooler_b);
}

void ParameterSet::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ParameterSet*>(this)->for_each(
      [&fn](const std::string& name, Tensor& t) {
        fn(name, static_cast<const Tensor&>(t));
      });
}

bool ParameterSet::all_finite() const {
  bool ok = true;
  for_each([&ok](const std::string&, const Tensor& t) {
    if (!t.all_finite()) ok = false;
  });
  return ok;
}

ParameterSet zeros_like_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t V = cfg.vocab_size, H = cfg.hidden, E = cfg.embed,
                     F = cfg.ff_dim, P = cfg.max_positions;
  ParameterSet p;
  p.token_embed = Tensor::zeros({V, E});
  if (cfg.factorized()) p.embed_proj = Tensor::zeros({E, H});
  p.pos_embed = Tensor::zeros({P, H});
  p.segment_embed = Tensor::zeros({2, H});
  p.embed_ln_gain = Tensor::zeros({H});
  p.embed_ln_bias = Tensor::zeros({H});
  const std::size_t groups = cfg.share_layers ? 1 : cfg.layers;
  p.layers.resize(groups);
  for (LayerParams& lp : p.layers) {
    lp.attn_q_w = Tensor::zeros({H, H});
    lp.attn_q_b = Tensor::zeros({H});
    lp.attn_k_w = Tensor::zeros({H, H});
    lp.attn_k_b = Tensor::zeros({H});
    lp.attn_v_w = Tensor::zeros({H, H});
    lp.attn_v_b = Tensor::zeros({H});
    lp.attn_out_w = Tensor::zeros({H, H});
    lp.attn_out_b = Tensor::zeros({H});
    lp.attn_ln_gain = Tensor::zeros({H});
    lp.attn_ln_bias = Tensor::zeros({H});
    lp.ffn_in_w = Tensor::zeros({H, F});
    lp.ffn_in_b = Tensor::zeros({F});
    lp.ffn_out_w = Tensor::zeros({F, H});
    lp.ffn_out_b = Tensor::zeros({H});
    lp.ffn_ln_gain = Tensor::zeros({H});
    lp.ffn_ln_bias = Tensor::zeros({H});
  }
  p.mlm_transform_w = Tensor::zeros({H, H});
  p.mlm_transform_b = Tensor::zeros({H});
  p.mlm_output_bias = Tensor::zeros({V});
  p.nsp_w = Tensor::zeros({H, 2});
  p.nsp_b = Tensor::zeros({2});
  p.pooler_w = Tensor::zeros({H, H});
  p.pooler_b = Tensor::zeros({H});
  return p;
}

ParameterSet init_model(const ModelConfig& cfg) {
  ParameterSet p = zeros_like_params(cfg);
  Rng rng(cfg.seed);
  p.for_each([&rng](const std::string& name, Tensor& t) {
    const bool gain = name.size() >= 5 && name.ends_with("_gain");
    const bool bias = name.ends_with("_b") || name.ends_with("_bias");
    if (gain) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else if (!bias) {
      for (double& v : t.data) v = rng.truncated_normal(kInitStd, kInitTrunc);
    }
  });
  return p;
}

std::int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t V = cfg.vocab_size, H = cfg.hidden, E = cfg.embed,
                     F = cfg.ff_dim, P = cfg.max_positions, L = cfg.layers;
  std::int64_t n = 0;
  n += V * E;                              // token_embed
  if (cfg.factorized()) n += E * H;        // embed_proj
  n += P * H + 2 * H;                      // position + segment embeddings
  n += 2 * H;                              // embedding layer norm
  std::int64_t per_layer = 0;
  per_layer += 4 * (H * H + H);            // q,k,v,out projections
  per_layer += 2 * H;                      // attention layer norm
  per_layer += H * F + F + F * H + H;      // feed-forward
  per_layer += 2 * H;                      // feed-forward layer norm
  n += per_layer * (cfg.share_layers ? 1 : L);
  n += H * H + H;                          // mlm transform
  n += V;                                  // mlm output bias
  n += H * 2 + 2;                          // nsp head
  n += H * H + H;                          // pooler
  return n;
}

ForwardOut forward(const ModelConfig& cfg, const ParameterSet& params,
                   const Batch& batch, ForwardMode mode, ForwardCache* cache,
                   Rng* dropout_rng) {
  cfg.validate();
  const std::int64_t B = batch.size();
  if (B == 0) throw UsageError("empty batch");
  const std::int64_t T = batch.seq_len();
  if (T < 1 || T > cfg.max_positions) {
    throw UsageError("sequence length " + std::to_string(T) +
                     " exceeds max_positions " +
                     std::to_string(cfg.max_positions));
  }
  for (const Encoding& e : batch.encodings) {
    if (static_cast<std::int64_t>(e.ids.size()) != T ||
        e.type_ids.size() != e.ids.size() ||
        e.attention_mask.size() != e.ids.size()) {
      throw UsageError("ragged batch: encodings must share one length");
    }
  }

  const std::int64_t H = cfg.hidden, A = cfg.heads, Dh = H / A, V = cfg.vocab_size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.batch = batch;

  // Embeddings: token (through the projection when factorized) + position +
  // segment, then layer norm and dropout.
  c.emb_sum = Tensor::zeros({B, T, H});
  for (std::int64_t b = 0; b < B; ++b) {
    const Encoding& enc = batch.encodings[static_cast<std::size_t>(b)];
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int32_t id = enc.ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= V) {
        throw DataError("token id " + std::to_string(id) +
                        " out of range at batch " + std::to_string(b) +
                        " position " + std::to_string(t));
      }
      const std::int32_t seg = enc.type_ids[static_cast<std::size_t>(t)];
      if (seg != 0 && seg != 1) {
        throw DataError("segment id must be 0 or 1 at batch " +
                        std::to_string(b) + " position " + std::to_string(t));
      }
      double* row = &c.emb_sum.at(b, t, 0);
      if (cfg.factorized()) {
        for (std::int64_t e = 0; e < cfg.embed; ++e) {
          const double te = params.token_embed.at(id, e);
          if (te == 0.0) continue;
          const double* proj = params.embed_proj.data.data() + e * H;
          for (std::int64_t h = 0; h < H; ++h) row[h] += te * proj[h];
        }
      } else {
        for (std::int64_t h = 0; h < H; ++h) {
          row[h] = params.token_embed.at(id, h);
        }
      }
      for (std::int64_t h = 0; h < H; ++h) {
        row[h] += params.pos_embed.at(t, h) + params.segment_embed.at(seg, h);
      }
    }
  }
  c.emb_out = Tensor::zeros({B, T, H});
  layer_norm_forward(c.emb_sum.data.data(), B * T, H, params.embed_ln_gain,
                     params.embed_ln_bias, c.emb_ln, c.emb_out.data.data());
  apply_dropout(c.emb_out, cfg.dropout, dropout_rng, c.drop_emb);

  const Tensor* x = &c.emb_out;
  c.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    LayerCache& lc = c.layers[static_cast<std::size_t>(l)];
    const LayerParams& lp =
        params.layers[cfg.share_layers ? 0 : static_cast<std::size_t>(l)];
    lc.x_in = *x;

    lc.q = Tensor::zeros({B, T, H});
    lc.k = Tensor::zeros({B, T, H});
    lc.v = Tensor::zeros({B, T, H});
    linear_forward(lc.x_in.data.data(), B * T, H, lp.attn_q_w, lp.attn_q_b,
                   lc.q.data.data());
    linear_forward(lc.x_in.data.data(), B * T, H, lp.attn_k_w, lp.attn_k_b,
                   lc.k.data.data());
    linear_forward(lc.x_in.data.data(), B * T, H, lp.attn_v_w, lp.attn_v_b,
                   lc.v.data.data());

    lc.attn_probs = Tensor::zeros({B, A, T, T});
    lc.ctx = Tensor::zeros({B, T, H});
    std::vector<double> row(static_cast<std::size_t>(T));
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& mask =
          batch.encodings[static_cast<std::size_t>(b)].attention_mask;
      for (std::int64_t a = 0; a < A; ++a) {
        const std::int64_t off = a * Dh;
        for (std::int64_t i = 0; i < T; ++i) {
          for (std::int64_t j = 0; j < T; ++j) {
            double s = 0.0;
            for (std::int64_t d = 0; d < Dh; ++d) {
              s += lc.q.at(b, i, off + d) * lc.k.at(b, j, off + d);
            }
            s *= scale;
            if (mask[static_cast<std::size_t>(j)] == 0) s += kMaskBias;
            row[static_cast<std::size_t>(j)] = s;
          }
          softmax_row(row.data(), T);
          for (std::int64_t j = 0; j < T; ++j) {
            const double pij = row[static_cast<std::size_t>(j)];
            lc.attn_probs.data[static_cast<std::size_t>(
                ((b * A + a) * T + i) * T + j)] = pij;
            if (pij == 0.0) continue;
            for (std::int64_t d = 0; d < Dh; ++d) {
              lc.ctx.at(b, i, off + d) += pij * lc.v.at(b, j, off + d);
            }
          }
        }
      }
    }

    lc.attn_branch = Tensor::zeros({B, T, H});
    linear_forward(lc.ctx.data.data(), B * T, H, lp.attn_out_w, lp.attn_out_b,
                   lc.attn_branch.data.data());
    apply_dropout(lc.attn_branch, cfg.dropout, dropout_rng, lc.drop_attn);

    Tensor sum1 = Tensor::zeros({B, T, H});
    for (std::size_t i = 0; i < sum1.data.size(); ++i) {
      sum1.data[i] = lc.x_in.data[i] + lc.attn_branch.data[i];
    }
    lc.x_mid = Tensor::zeros({B, T, H});
    layer_norm_forward(sum1.data.data(), B * T, H, lp.attn_ln_gain,
                       lp.attn_ln_bias, lc.ln1, lc.x_mid.data.data());

    lc.ffn_pre = Tensor::zeros({B, T, cfg.ff_dim});
    linear_forward(lc.x_mid.data.data(), B * T, H, lp.ffn_in_w, lp.ffn_in_b,
                   lc.ffn_pre.data.data());
    lc.ffn_act = Tensor::zeros({B, T, cfg.ff_dim});
    for (std::size_t i = 0; i < lc.ffn_pre.data.size(); ++i) {
      lc.ffn_act.data[i] = gelu(lc.ffn_pre.data[i]);
    }
    lc.ffn_branch = Tensor::zeros({B, T, H});
    linear_forward(lc.ffn_act.data.data(), B * T, cfg.ff_dim, lp.ffn_out_w,
                   lp.ffn_out_b, lc.ffn_branch.data.data());
    apply_dropout(lc.ffn_branch, cfg.dropout, dropout_rng, lc.drop_ffn);

    Tensor sum2 = Tensor::zeros({B, T, H});
    for (std::size_t i = 0; i < sum2.data.size(); ++i) {
      sum2.data[i] = lc.x_mid.data[i] + lc.ffn_branch.data[i];
    }
    lc.x_out = Tensor::zeros({B, T, H});
    layer_norm_forward(sum2.data.data(), B * T, H, lp.ffn_ln_gain,
                       lp.ffn_ln_bias, lc.ln2, lc.x_out.data.data());

    if (!lc.x_out.all_finite()) {
      throw NumericError("non-finite activation in layer " +
                         std::to_string(l));
    }
    x = &lc.x_out;
  }

  ForwardOut out;
  out.sequence = *x;

  const bool want_pooled =
      mode == ForwardMode::pooled || mode == ForwardMode::mlm_nsp;
  if (want_pooled) {
    c.pooled_pre = Tensor::zeros({B, H});
    Tensor cls = Tensor::zeros({B, H});
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t h = 0; h < H; ++h) cls.at(b, h) = x->at(b, 0, h);
    }
    linear_forward(cls.data.data(), B, H, params.pooler_w, params.pooler_b,
                   c.pooled_pre.data.data());
    c.pooled = Tensor::zeros({B, H});
    for (std::size_t i = 0; i < c.pooled.data.size(); ++i) {
      c.pooled.data[i] = std::tanh(c.pooled_pre.data[i]);
    }
    out.pooled = c.pooled;
  }

  if (mode == ForwardMode::mlm_nsp) {
    c.mlm_pre = Tensor::zeros({B, T, H});
    linear_forward(x->data.data(), B * T, H, params.mlm_transform_w,
                   params.mlm_transform_b, c.mlm_pre.data.data());
    c.mlm_act = Tensor::zeros({B, T, H});
    for (std::size_t i = 0; i < c.mlm_pre.data.size(); ++i) {
      c.mlm_act.data[i] = gelu(c.mlm_pre.data[i]);
    }
    const Tensor tied = tied_output_matrix(cfg, params);
    out.mlm_logits = Tensor::zeros({B, T, V});
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t t = 0; t < T; ++t) {
        const double* m = &c.mlm_act.at(b, t, 0);
        double* lg = &out.mlm_logits.at(b, t, 0);
        for (std::int64_t v = 0; v < V; ++v) {
          const double* tr = tied.data.data() + v * H;
          double acc = params.mlm_output_bias.at(v);
          for (std::int64_t h = 0; h < H; ++h) acc += m[h] * tr[h];
          lg[v] = acc;
        }
      }
    }
    out.nsp_logits = Tensor::zeros({B, 2});
    linear_forward(c.pooled.data.data(), B, H, params.nsp_w, params.nsp_b,
                   out.nsp_logits.data.data());
  }
  return out;
}

ParameterSet backward(const ModelConfig& cfg, const ParameterSet& params,
                      const ForwardCache& cache, const UpstreamGrads& up) {
  const std::int64_t B = cache.batch.size();
  const std::int64_t T = cache.batch.seq_len();
  const std::int64_t H = cfg.hidden, A = cfg.heads, Dh = H / A, V = cfg.vocab_size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));

  ParameterSet g = zeros_like_params(cfg);
  Tensor d_seq = Tensor::zeros({B, T, H});
  Tensor d_pooled = Tensor::zeros({B, H});
  bool pooled_path = false;

  if (up.d_sequence) {
    for (std::size_t i = 0; i < d_seq.data.size(); ++i) {
      d_seq.data[i] += up.d_sequence->data[i];
    }
  }

  // MLM head: logits -> gelu transform -> sequence, with the tied output
  // matrix routing gradient into the token embedding (and the projection).
  if (up.d_mlm_logits) {
    const Tensor tied = tied_output_matrix(cfg, params);
    Tensor d_tied = Tensor::zeros({V, H});
    Tensor d_act = Tensor::zeros({B, T, H});
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t t = 0; t < T; ++t) {
        const double* dl = &up.d_mlm_logits->at(b, t, 0);
        const double* m = &cache.mlm_act.at(b, t, 0);
        double* da = &d_act.at(b, t, 0);
        for (std::int64_t v = 0; v < V; ++v) {
          const double dv = dl[v];
          if (dv == 0.0) continue;
          g.mlm_output_bias.at(v) += dv;
          const double* tr = tied.data.data() + v * H;
          double* dtr = d_tied.data.data() + v * H;
          for (std::int64_t h = 0; h < H; ++h) {
            da[h] += dv * tr[h];
            dtr[h] += dv * m[h];
          }
        }
      }
    }
    if (cfg.factorized()) {
      for (std::int64_t v = 0; v < V; ++v) {
        for (std::int64_t e = 0; e < cfg.embed; ++e) {
          double acc = 0.0;
          const double te = params.token_embed.at(v, e);
          for (std::int64_t h = 0; h < H; ++h) {
            const double dt = d_tied.at(v, h);
            acc += dt * params.embed_proj.at(e, h);
            g.embed_proj.at(e, h) += te * dt;
          }
          g.token_embed.at(v, e) += acc;
        }
      }
    } else {
      for (std::size_t i = 0; i < d_tied.data.size(); ++i) {
        g.token_embed.data[i] += d_tied.data[i];
      }
    }
    Tensor d_pre = Tensor::zeros({B, T, H});
    for (std::size_t i = 0; i < d_pre.data.size(); ++i) {
      d_pre.data[i] = d_act.data[i] * gelu_grad(cache.mlm_pre.data[i]);
    }
    const Tensor& seq = cache.layers.empty() ? cache.emb_out
                                             : cache.layers.back().x_out;
    linear_backward(seq.data.data(), d_pre.data.data(), B * T, H,
                    params.mlm_transform_w, g.mlm_transform_w,
                    g.mlm_transform_b, d_seq.data.data());
  }

  if (up.d_nsp_logits) {
    linear_backward(cache.pooled.data.data(), up.d_nsp_logits->data.data(), B,
                    H, params.nsp_w, g.nsp_w, g.nsp_b, d_pooled.data.data());
    pooled_path = true;
  }
  if (up.d_pooled) {
    for (std::size_t i = 0; i < d_pooled.data.size(); ++i) {
      d_pooled.data[i] += up.d_pooled->data[i];
    }
    pooled_path = true;
  }
  if (pooled_path) {
    Tensor d_pre = Tensor::zeros({B, H});
    for (std::size_t i = 0; i < d_pre.data.size(); ++i) {
      const double p = cache.pooled.data[i];
      d_pre.data[i] = d_pooled.data[i] * (1.0 - p * p);
    }
    Tensor cls = Tensor::zeros({B, H});
    const Tensor& seq = cache.layers.empty() ? cache.emb_out
                                             : cache.layers.back().x_out;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t h = 0; h < H; ++h) cls.at(b, h) = seq.at(b, 0, h);
    }
    Tensor d_cls = Tensor::zeros({B, H});
    linear_backward(cls.data.data(), d_pre.data.data(), B, H, params.pooler_w,
                    g.pooler_w, g.pooler_b, d_cls.data.data());
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t h = 0; h < H; ++h) d_seq.at(b, 0, h) += d_cls.at(b, h);
    }
  }

  // Encoder layers in reverse.
  for (std::int64_t l = cfg.layers - 1; l >= 0; --l) {
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
    const std::size_t gi = cfg.share_layers ? 0 : static_cast<std::size_t>(l);
    const LayerParams& lp = params.layers[gi];
    LayerParams& lg = g.layers[gi];

    Tensor d_sum2 = Tensor::zeros({B, T, H});
    layer_norm_backward(d_seq.data.data(), B * T, H, lp.ffn_ln_gain, lc.ln2,
                        lg.ffn_ln_gain, lg.ffn_ln_bias, d_sum2.data.data());

    Tensor d_x_mid = d_sum2;  // residual branch
    Tensor d_ffn_out = d_sum2;
    dropout_backward(d_ffn_out, lc.drop_ffn);

    Tensor d_ffn_act = Tensor::zeros({B, T, cfg.ff_dim});
    linear_backward(lc.ffn_act.data.data(), d_ffn_out.data.data(), B * T,
                    cfg.ff_dim, lp.ffn_out_w, lg.ffn_out_w, lg.ffn_out_b,
                    d_ffn_act.data.data());
    Tensor d_ffn_pre = Tensor::zeros({B, T, cfg.ff_dim});
    for (std::size_t i = 0; i < d_ffn_pre.data.size(); ++i) {
      d_ffn_pre.data[i] =
          d_ffn_act.data[i] * gelu_grad(lc.ffn_pre.data[i]);
    }
    linear_backward(lc.x_mid.data.data(), d_ffn_pre.data.data(), B * T, H,
                    lp.ffn_in_w, lg.ffn_in_w, lg.ffn_in_b,
                    d_x_mid.data.data());

    Tensor d_sum1 = Tensor::zeros({B, T, H});
    layer_norm_backward(d_x_mid.data.data(), B * T, H, lp.attn_ln_gain,
                        lc.ln1, lg.attn_ln_gain, lg.attn_ln_bias,
                        d_sum1.data.data());

    Tensor d_x_in = d_sum1;  // residual branch
    Tensor d_attn_out = d_sum1;
    dropout_backward(d_attn_out, lc.drop_attn);

    Tensor d_ctx = Tensor::zeros({B, T, H});
    linear_backward(lc.ctx.data.data(), d_attn_out.data.data(), B * T, H,
                    lp.attn_out_w, lg.attn_out_w, lg.attn_out_b,
                    d_ctx.data.data());

    Tensor d_q = Tensor::zeros({B, T, H});
    Tensor d_k = Tensor::zeros({B, T, H});
    Tensor d_v = Tensor::zeros({B, T, H});
    std::vector<double> d_probs(static_cast<std::size_t>(T));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t a = 0; a < A; ++a) {
        const std::int64_t off = a * Dh;
        for (std::int64_t i = 0; i < T; ++i) {
          const double* probs = lc.attn_probs.data.data() +
                                ((b * A + a) * T + i) * T;
          double dot = 0.0;
          for (std::int64_t j = 0; j < T; ++j) {
            double dp = 0.0;
            for (std::int64_t d = 0; d < Dh; ++d) {
              const double dc = d_ctx.at(b, i, off + d);
              dp += dc * lc.v.at(b, j, off + d);
              d_v.at(b, j, off + d) += probs[j] * dc;
            }
            d_probs[static_cast<std::size_t>(j)] = dp;
            dot += probs[j] * dp;
          }
          for (std::int64_t j = 0; j < T; ++j) {
            const double ds =
                probs[j] * (d_probs[static_cast<std::size_t>(j)] - dot);
            if (ds == 0.0) continue;
            for (std::int64_t d = 0; d < Dh; ++d) {
              d_q.at(b, i, off + d) += scale * ds * lc.k.at(b, j, off + d);
              d_k.at(b, j, off + d) += scale * ds * lc.q.at(b, i, off + d);
            }
          }
        }
      }
    }
    linear_backward(lc.x_in.data.data(), d_q.data.data(), B * T, H,
                    lp.attn_q_w, lg.attn_q_w, lg.attn_q_b, d_x_in.data.data());
    linear_backward(lc.x_in.data.data(), d_k.data.data(), B * T, H,
                    lp.attn_k_w, lg.attn_k_w, lg.attn_k_b, d_x_in.data.data());
    linear_backward(lc.x_in.data.data(), d_v.data.data(), B * T, H,
                    lp.attn_v_w, lg.attn_v_w, lg.attn_v_b, d_x_in.data.data());
    d_seq = std::move(d_x_in);
  }

  // Embedding stage.
  dropout_backward(d_seq, cache.drop_emb);
  Tensor d_emb_sum = Tensor::zeros({B, T, H});
  layer_norm_backward(d_seq.data.data(), B * T, H, params.embed_ln_gain,
                      cache.emb_ln, g.embed_ln_gain, g.embed_ln_bias,
                      d_emb_sum.data.data());
  for (std::int64_t b = 0; b < B; ++b) {
    const Encoding& enc = cache.batch.encodings[static_cast<std::size_t>(b)];
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int32_t id = enc.ids[static_cast<std::size_t>(t)];
      const std::int32_t seg = enc.type_ids[static_cast<std::size_t>(t)];
      const double* d = &d_emb_sum.at(b, t, 0);
      for (std::int64_t h = 0; h < H; ++h) {
        g.pos_embed.at(t, h) += d[h];
        g.segment_embed.at(seg, h) += d[h];
      }
      if (cfg.factorized()) {
        for (std::int64_t e = 0; e < cfg.embed; ++e) {
          const double te = params.token_embed.at(id, e);
          double acc = 0.0;
          const double* proj = params.embed_proj.data.data() + e * H;
          double* dproj = g.embed_proj.data.data() + e * H;
          for (std::int64_t h = 0; h < H; ++h) {
            acc += d[h] * proj[h];
            dproj[h] += te * d[h];
          }
          g.token_embed.at(id, e) += acc;
        }
      } else {
        for (std::int64_t h = 0; h < H; ++h) g.token_embed.at(id, h) += d[h];
      }
    }
  }
  return g;
}

double cross_entropy_row(const double* logits, std::int64_t n,
                         std::int32_t label) {
  double mx = logits[0];
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  return std::log(sum) - (logits[label] - mx);
}

LossBreakdown mlm_nsp_loss_and_grads(
    const ModelConfig& cfg, const ParameterSet& params, const Batch& batch,
    const std::vector<std::int32_t>& mlm_labels,
    const std::vector<std::int32_t>& nsp_labels, ParameterSet* grads,
    Rng* dropout_rng) {
  const std::int64_t B = batch.size();
  const std::int64_t T = batch.seq_len();
  const std::int64_t V = cfg.vocab_size;
  if (static_cast<std::int64_t>(mlm_labels.size()) != B * T) {
    throw UsageError("mlm_labels must be batch*seq_len long");
  }
  if (static_cast<std::int64_t>(nsp_labels.size()) != B) {
    throw UsageError("nsp_labels must hold one entry per sequence");
  }

  LossBreakdown loss;
  for (const std::int32_t l : mlm_labels) {
    if (l >= 0) ++loss.masked_positions;
  }
  for (const std::int32_t l : nsp_labels) {
    if (l >= 0) ++loss.nsp_examples;
  }
  if (loss.masked_positions == 0 && loss.nsp_examples == 0) {
    throw NumericError("no training signal: batch has zero masked positions "
                       "and no NSP label");
  }

  ForwardCache cache;
  const ForwardOut out =
      forward(cfg, params, batch, ForwardMode::mlm_nsp, &cache, dropout_rng);

  Tensor d_mlm = Tensor::zeros({B, T, V});
  if (loss.masked_positions > 0) {
    const double inv = 1.0 / static_cast<double>(loss.masked_positions);
    std::vector<double> probs(static_cast<std::size_t>(V));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int32_t label =
            mlm_labels[static_cast<std::size_t>(b * T + t)];
        if (label < 0) continue;
        if (label >= V) throw DataError("mlm label out of range");
        const double* lg = &out.mlm_logits.at(b, t, 0);
        loss.mlm += cross_entropy_row(lg, V, label) * inv;
        double mx = lg[0];
        for (std::int64_t v = 1; v < V; ++v) mx = std::max(mx, lg[v]);
        double sum = 0.0;
        for (std::int64_t v = 0; v < V; ++v) {
          probs[static_cast<std::size_t>(v)] = std::exp(lg[v] - mx);
          sum += probs[static_cast<std::size_t>(v)];
        }
        for (std::int64_t v = 0; v < V; ++v) {
          const double p = probs[static_cast<std::size_t>(v)] / sum;
          d_mlm.at(b, t, v) = (p - (v == label ? 1.0 : 0.0)) * inv;
        }
      }
    }
  }

  Tensor d_nsp = Tensor::zeros({B, 2});
  if (loss.nsp_examples > 0) {
    const double inv = 1.0 / static_cast<double>(loss.nsp_examples);
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int32_t label = nsp_labels[static_cast<std::size_t>(b)];
      if (label < 0) continue;
      if (label > 1) throw DataError("nsp label must be 0 or 1");
      const double* lg = &out.nsp_logits.at(b, 0);
      loss.nsp += cross_entropy_row(lg, 2, label) * inv;
      const double mx = std::max(lg[0], lg[1]);
      const double e0 = std::exp(lg[0] - mx), e1 = std::exp(lg[1] - mx);
      const double z = e0 + e1;
      d_nsp.at(b, 0) = (e0 / z - (label == 0 ? 1.0 : 0.0)) * inv;
      d_nsp.at(b, 1) = (e1 / z - (label == 1 ? 1.0 : 0.0)) * inv;
    }
  }

  loss.total = loss.mlm + loss.nsp;
  if (!std::isfinite(loss.total)) {
    throw NumericError("non-finite loss");
  }

  if (grads) {
    UpstreamGrads up;
    if (loss.masked_positions > 0) up.d_mlm_logits = &d_mlm;
    if (loss.nsp_examples > 0) up.d_nsp_logits = &d_nsp;
    *grads = backward(cfg, params, cache, up);
  }
  return loss;
}

AdamState AdamState::init(const ModelConfig& cfg) {
  AdamState s;
  s.step = 0;
  s.m = zeros_like_params(cfg);
  s.v = zeros_like_params(cfg);
  return s;
}

void adamw_update_tensor(Tensor& param, const Tensor& grad, Tensor& m,
                         Tensor& v, std::int64_t step,
                         const AdamHyper& hyper) {
  if (param.data.size() != grad.data.size()) {
    throw UsageError("gradient shape mismatch in optimizer step");
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    m.data[i] = hyper.beta1 * m.data[i] + (1.0 - hyper.beta1) * grad.data[i];
    v.data[i] = hyper.beta2 * v.data[i] +
                (1.0 - hyper.beta2) * grad.data[i] * grad.data[i];
    const double mhat = m.data[i] / bc1;
    const double vhat = v.data[i] / bc2;
    param.data[i] -= hyper.lr * (mhat / (std::sqrt(vhat) + hyper.eps) +
                                 hyper.weight_decay * param.data[i]);
  }
}

void adamw_step(ParameterSet& params, const ParameterSet& grads,
                AdamState& state, const AdamHyper& hyper) {
  if (!grads.all_finite()) {
    throw NumericError("non-finite gradients in optimizer step");
  }
  state.step += 1;

  std::vector<Tensor*> ps, gs, ms, vs;
  params.for_each([&ps](const std::string&, Tensor& t) { ps.push_back(&t); });
  const_cast<ParameterSet&>(grads).for_each(
      [&gs](const std::string&, Tensor& t) { gs.push_back(&t); });
  state.m.for_each([&ms](const std::string&, Tensor& t) { ms.push_back(&t); });
  state.v.for_each([&vs](const std::string&, Tensor& t) { vs.push_back(&t); });
  if (ps.size() != gs.size() || ps.size() != ms.size() ||
      ps.size() != vs.size()) {
    throw UsageError("optimizer state does not match parameter shapes");
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    adamw_update_tensor(*ps[k], *gs[k], *ms[k], *vs[k], state.step, hyper);
  }
}

}  // namespace twlm
