// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fairjudge/error.hpp"
#include "fairjudge/rng.hpp"

namespace fairjudge {

namespace {

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

// y = x . W for one row; W is in x out, row-major.
void matvec(const double* x, const double* w, std::size_t in, std::size_t out, double* y) {
  std::fill(y, y + out, 0.0);
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* wr = w + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * wr[j];
  }
}

// dx = dy . W^T for one row (overwrites dx when accumulate is false).
void matvec_t(const double* dy, const double* w, std::size_t in, std::size_t out, double* dx,
              bool accumulate) {
  for (std::size_t i = 0; i < in; ++i) {
    const double* wr = w + i * out;
    double acc = 0.0;
    for (std::size_t j = 0; j < out; ++j) acc += dy[j] * wr[j];
    dx[i] = accumulate ? dx[i] + acc : acc;
  }
}

// dW += x^T dy for one row.
void outer_acc(const double* x, const double* dy, std::size_t in, std::size_t out, double* dw) {
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    double* dwr = dw + i * out;
    for (std::size_t j = 0; j < out; ++j) dwr[j] += xi * dy[j];
  }
}

void layer_norm(const double* x, const double* g, const double* b, std::size_t d, double* xhat,
                double* rstd, double* y) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(d);
  const double r = 1.0 / std::sqrt(var + kLnEps);
  *rstd = r;
  for (std::size_t i = 0; i < d; ++i) {
    xhat[i] = (x[i] - mean) * r;
    y[i] = xhat[i] * g[i] + b[i];
  }
}

// dx += layer-norm backward of dy; accumulates gain/bias grads.
void layer_norm_backward(const double* dy, const double* xhat, double rstd, const double* g,
                         std::size_t d, double* dx, double* dg, double* db) {
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dxh = dy[i] * g[i];
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[i];
    dg[i] += dy[i] * xhat[i];
    db[i] += dy[i];
  }
  mean_dxhat /= static_cast<double>(d);
  mean_dxhat_xhat /= static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double dxh = dy[i] * g[i];
    dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
}

double tanh_fast(double x) {
  if (x > 20.0) return 1.0;
  if (x < -20.0) return -1.0;
  const double e = std::expm1(2.0 * x);
  return e / (e + 2.0);
}

// tanh of the GELU inner argument; kept from forward for the backward pass.
double gelu_tanh(double u) { return tanh_fast(kGeluC * (u + 0.044715 * u * u * u)); }

double gelu(double u, double th) { return 0.5 * u * (1.0 + th); }

double gelu_grad(double u, double th) {
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

// Causal attention for the query at position t over keys/values rows 0..t.
// probs receives n_heads x (t+1) weights.
void attend(const double* q, const double* keys, const double* vals, std::size_t t,
            const LmConfig& cfg, double* probs, std::size_t probs_stride, double* ctx) {
  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::fill(ctx, ctx + d, 0.0);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t off = h * hd;
    double* p = probs + h * probs_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s <= t; ++s) {
      const double* kr = keys + s * d + off;
      double acc = 0.0;
      for (std::size_t i = 0; i < hd; ++i) acc += q[off + i] * kr[i];
      p[s] = acc * scale;
      mx = std::max(mx, p[s]);
    }
    double sum = 0.0;
    for (std::size_t s = 0; s <= t; ++s) {
      p[s] = std::exp(p[s] - mx);
      sum += p[s];
    }
    for (std::size_t s = 0; s <= t; ++s) p[s] /= sum;
    for (std::size_t s = 0; s <= t; ++s) {
      const double* vr = vals + s * d + off;
      for (std::size_t i = 0; i < hd; ++i) ctx[off + i] += p[s] * vr[i];
    }
  }
}

void check_ids(const LmConfig& cfg, std::span<const int> ids) {
  if (ids.size() > cfg.context_len) {
    throw Error(ErrorCode::SeqTooLong, "length " + std::to_string(ids.size()) +
                                           " exceeds context " + std::to_string(cfg.context_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(id));
    }
  }
}

}  // namespace

void LmConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1) {
    fail("all model counts must be >= 1");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (context_len < 2) fail("context_len must be >= 2");
}

ParamLayout ParamLayout::build(const LmConfig& c) {
  ParamLayout lay;
  std::size_t off = 0;
  auto add = [&](const std::string& name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (auto s : shape) size *= s;
    lay.tensors.push_back({name, std::move(shape), off, size});
    const std::size_t at = off;
    off += size;
    return at;
  };
  lay.tok_emb = add("tok_emb", {c.vocab_size, c.d_model});
  lay.pos_emb = add("pos_emb", {c.context_len, c.d_model});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerLayout L{};
    L.ln1_g = add(p + "ln1_g", {c.d_model});
    L.ln1_b = add(p + "ln1_b", {c.d_model});
    L.wq = add(p + "wq", {c.d_model, c.d_model});
    L.wk = add(p + "wk", {c.d_model, c.d_model});
    L.wv = add(p + "wv", {c.d_model, c.d_model});
    L.wo = add(p + "wo", {c.d_model, c.d_model});
    L.ln2_g = add(p + "ln2_g", {c.d_model});
    L.ln2_b = add(p + "ln2_b", {c.d_model});
    L.w1 = add(p + "w1", {c.d_model, c.d_ff});
    L.b1 = add(p + "b1", {c.d_ff});
    L.w2 = add(p + "w2", {c.d_ff, c.d_model});
    L.b2 = add(p + "b2", {c.d_model});
    lay.layers.push_back(L);
  }
  lay.lnf_g = add("lnf_g", {c.d_model});
  lay.lnf_b = add("lnf_b", {c.d_model});
  lay.w_out = add("w_out", {c.d_model, c.vocab_size});
  lay.total = off;
  return lay;
}

LmParams::LmParams(const LmConfig& config)
    : config_(config), layout_(ParamLayout::build(config)), values_(layout_.total, 0.0) {
  config_.validate();
}

LmParams LmParams::initialize(const LmConfig& config) {
  LmParams p(config);
  Rng rng(config.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  for (const auto& t : p.layout_.tensors) {
    const std::string base = t.name.substr(t.name.find('.') + 1);
    double* v = p.at(t.offset);
    if (t.name == "w_out") continue;
    if (base == "ln1_g" || base == "ln2_g" || base == "lnf_g") {
      std::fill(v, v + t.size, 1.0);
    } else if (t.shape.size() == 2) {
      for (std::size_t i = 0; i < t.size; ++i) v[i] = rng.normal() * scale;
    }
  }
  return p;
}

bool LmParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

void LmParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double entropy(std::span<const double> logits, double temperature) {
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  const auto lp = log_softmax(scaled);
  double h = 0.0;
  for (double l : lp) h -= std::exp(l) * l;
  return h;
}

struct Activations {
  struct Layer {
    std::vector<double> xhat1, rstd1, h1, q, kall, vall, probs, ctx, xhat2, rstd2, h2, pre, th, act;
  };
  std::size_t start = 0;  // context rows before this segment
  std::size_t rows = 0;
  std::vector<int> ids;
  std::vector<Layer> layers;
  std::vector<double> xhatf, rstdf, hf;  // empty when the final norm is skipped

  std::size_t span() const { return start + rows; }
};

namespace {

// Runs the trunk over ids placed after the rows of ctx (if any). Keys and
// values of every visible row are kept in kall/vall so backward can route
// gradients into the context.
void run_segment(const LmParams& params, std::span<const int> ids, const Activations* ctx, bool final_norm,
                 Activations& a) {
  const auto& c = params.config();
  const auto& lay = params.layout();
  const std::size_t T = ids.size();
  const std::size_t d = c.d_model;
  const std::size_t f = c.d_ff;
  const std::size_t P = ctx != nullptr ? ctx->rows : 0;
  const std::size_t S = P + T;
  if (S > c.context_len) {
    throw Error(ErrorCode::SeqTooLong,
                "length " + std::to_string(S) + " exceeds context " + std::to_string(c.context_len));
  }
  a.start = P;
  a.rows = T;
  a.ids.assign(ids.begin(), ids.end());
  a.layers.assign(c.n_layers, {});

  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* te = params.at(lay.tok_emb) + static_cast<std::size_t>(ids[t]) * d;
    const double* pe = params.at(lay.pos_emb) + (P + t) * d;
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
  }

  std::vector<double> tmp(std::max(d, f));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = lay.layers[l];
    auto& A = a.layers[l];
    A.xhat1.resize(T * d);
    A.rstd1.resize(T);
    A.h1.resize(T * d);
    A.q.resize(T * d);
    A.kall.resize(S * d);
    A.vall.resize(S * d);
    A.probs.assign(c.n_heads * T * S, 0.0);
    A.ctx.resize(T * d);
    A.xhat2.resize(T * d);
    A.rstd2.resize(T);
    A.h2.resize(T * d);
    A.pre.resize(T * f);
    A.th.resize(T * f);
    A.act.resize(T * f);
    if (P > 0) {
      std::copy_n(ctx->layers[l].kall.begin(), P * d, A.kall.begin());
      std::copy_n(ctx->layers[l].vall.begin(), P * d, A.vall.begin());
    }

    for (std::size_t t = 0; t < T; ++t) {
      layer_norm(&x[t * d], params.at(L.ln1_g), params.at(L.ln1_b), d, &A.xhat1[t * d],
                 &A.rstd1[t], &A.h1[t * d]);
      matvec(&A.h1[t * d], params.at(L.wq), d, d, &A.q[t * d]);
      matvec(&A.h1[t * d], params.at(L.wk), d, d, &A.kall[(P + t) * d]);
      matvec(&A.h1[t * d], params.at(L.wv), d, d, &A.vall[(P + t) * d]);
    }
    for (std::size_t t = 0; t < T; ++t) {
      attend(&A.q[t * d], A.kall.data(), A.vall.data(), P + t, c, &A.probs[t * S], T * S, &A.ctx[t * d]);
      matvec(&A.ctx[t * d], params.at(L.wo), d, d, tmp.data());
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += tmp[i];
    }
    for (std::size_t t = 0; t < T; ++t) {
      layer_norm(&x[t * d], params.at(L.ln2_g), params.at(L.ln2_b), d, &A.xhat2[t * d],
                 &A.rstd2[t], &A.h2[t * d]);
      matvec(&A.h2[t * d], params.at(L.w1), d, f, &A.pre[t * f]);
      const double* b1 = params.at(L.b1);
      for (std::size_t j = 0; j < f; ++j) {
        A.pre[t * f + j] += b1[j];
        A.th[t * f + j] = gelu_tanh(A.pre[t * f + j]);
        A.act[t * f + j] = gelu(A.pre[t * f + j], A.th[t * f + j]);
      }
      matvec(&A.act[t * f], params.at(L.w2), f, d, tmp.data());
      const double* b2 = params.at(L.b2);
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += tmp[i] + b2[i];
    }
  }

  if (!final_norm) return;
  a.xhatf.resize(T * d);
  a.rstdf.resize(T);
  a.hf.resize(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    layer_norm(&x[t * d], params.at(lay.lnf_g), params.at(lay.lnf_b), d, &a.xhatf[t * d],
               &a.rstdf[t], &a.hf[t * d]);
  }
}

// Per-layer gradients of the keys and values of a segment's own rows.
struct KvGrad {
  std::vector<std::vector<double>> dk, dv;

  KvGrad(std::size_t layers, std::size_t n) : dk(layers, std::vector<double>(n, 0.0)), dv(dk) {}
};

// Backpropagates through one segment. dhf holds gradients of the final
// hidden states (null when the segment produced none), inject adds
// gradients flowing into the segment's own keys/values from later
// segments, ctx_grad receives those of the context rows.
void backward_segment(const LmParams& params, const Activations& a, const double* dhf, const KvGrad* inject,
                      KvGrad* ctx_grad, Gradients& grads) {
  const auto& c = params.config();
  const auto& lay = params.layout();
  const std::size_t T = a.rows;
  const std::size_t P = a.start;
  const std::size_t S = a.span();
  const std::size_t d = c.d_model;
  const std::size_t f = c.d_ff;
  const std::size_t hd = c.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dx(T * d, 0.0);
  if (dhf != nullptr) {
    for (std::size_t t = 0; t < T; ++t) {
      layer_norm_backward(&dhf[t * d], &a.xhatf[t * d], a.rstdf[t], params.at(lay.lnf_g), d, &dx[t * d],
                          grads.at(lay.lnf_g), grads.at(lay.lnf_b));
    }
  }

  std::vector<double> dact(T * f), dh(T * d), dctx(T * d), dq(T * d), dk(S * d), dv(S * d);
  std::vector<double> dp(S);
  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& L = lay.layers[li];
    const auto& A = a.layers[li];

    // Feed-forward block: x += gelu(h2 W1 + b1) W2 + b2.
    double* db2 = grads.at(L.b2);
    double* db1 = grads.at(L.b1);
    for (std::size_t t = 0; t < T; ++t) {
      const double* dout = &dx[t * d];
      for (std::size_t i = 0; i < d; ++i) db2[i] += dout[i];
      outer_acc(&A.act[t * f], dout, f, d, grads.at(L.w2));
      matvec_t(dout, params.at(L.w2), f, d, &dact[t * f], false);
      for (std::size_t j = 0; j < f; ++j) {
        dact[t * f + j] *= gelu_grad(A.pre[t * f + j], A.th[t * f + j]);
        db1[j] += dact[t * f + j];
      }
      outer_acc(&A.h2[t * d], &dact[t * f], d, f, grads.at(L.w1));
      matvec_t(&dact[t * f], params.at(L.w1), d, f, &dh[t * d], false);
      layer_norm_backward(&dh[t * d], &A.xhat2[t * d], A.rstd2[t], params.at(L.ln2_g), d,
                          &dx[t * d], grads.at(L.ln2_g), grads.at(L.ln2_b));
    }

    // Attention block: x += attn(h1) Wo.
    for (std::size_t t = 0; t < T; ++t) {
      outer_acc(&A.ctx[t * d], &dx[t * d], d, d, grads.at(L.wo));
      matvec_t(&dx[t * d], params.at(L.wo), d, d, &dctx[t * d], false);
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t last = P + t;
        const double* p = &A.probs[h * T * S + t * S];
        const double* dc = &dctx[t * d + off];
        double dot = 0.0;
        for (std::size_t s = 0; s <= last; ++s) {
          const double* vr = &A.vall[s * d + off];
          double acc = 0.0;
          for (std::size_t i = 0; i < hd; ++i) acc += dc[i] * vr[i];
          dp[s] = acc;
          dot += p[s] * acc;
          double* dvr = &dv[s * d + off];
          for (std::size_t i = 0; i < hd; ++i) dvr[i] += p[s] * dc[i];
        }
        const double* qr = &A.q[t * d + off];
        double* dqr = &dq[t * d + off];
        for (std::size_t s = 0; s <= last; ++s) {
          const double ds = p[s] * (dp[s] - dot) * att_scale;
          const double* kr = &A.kall[s * d + off];
          double* dkr = &dk[s * d + off];
          for (std::size_t i = 0; i < hd; ++i) {
            dqr[i] += ds * kr[i];
            dkr[i] += ds * qr[i];
          }
        }
      }
    }
    if (inject != nullptr) {
      for (std::size_t i = 0; i < T * d; ++i) {
        dk[P * d + i] += inject->dk[li][i];
        dv[P * d + i] += inject->dv[li][i];
      }
    }
    if (ctx_grad != nullptr) {
      for (std::size_t i = 0; i < P * d; ++i) {
        ctx_grad->dk[li][i] += dk[i];
        ctx_grad->dv[li][i] += dv[i];
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double* dkr = &dk[(P + t) * d];
      const double* dvr = &dv[(P + t) * d];
      outer_acc(&A.h1[t * d], &dq[t * d], d, d, grads.at(L.wq));
      outer_acc(&A.h1[t * d], dkr, d, d, grads.at(L.wk));
      outer_acc(&A.h1[t * d], dvr, d, d, grads.at(L.wv));
      matvec_t(&dq[t * d], params.at(L.wq), d, d, &dh[t * d], false);
      matvec_t(dkr, params.at(L.wk), d, d, &dh[t * d], true);
      matvec_t(dvr, params.at(L.wv), d, d, &dh[t * d], true);
      layer_norm_backward(&dh[t * d], &A.xhat1[t * d], A.rstd1[t], params.at(L.ln1_g), d,
                          &dx[t * d], grads.at(L.ln1_g), grads.at(L.ln1_b));
    }
  }

  double* dtok = grads.at(lay.tok_emb);
  double* dpos = grads.at(lay.pos_emb);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t id = static_cast<std::size_t>(a.ids[t]);
    for (std::size_t i = 0; i < d; ++i) {
      dtok[id * d + i] += dx[t * d + i];
      dpos[(P + t) * d + i] += dx[t * d + i];
    }
  }
}

// Log-probabilities of the targets of rows [first, rows) of a segment;
// stores the softmax of each of those rows in probs.
double completion_rows(const LmParams& params, const Activations& a, std::size_t first,
                       std::span<const int> targets, std::vector<double>& probs) {
  const auto& c = params.config();
  const std::size_t V = c.vocab_size;
  const std::size_t n = a.rows - first;
  probs.resize(n * V);
  std::vector<double> logits(V);
  const double* w_out = params.at(params.layout().w_out);
  double lp_sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    matvec(&a.hf[(first + r) * c.d_model], w_out, c.d_model, V, logits.data());
    const auto lp = log_softmax(logits);
    lp_sum += lp[static_cast<std::size_t>(targets[r])];
    for (std::size_t j = 0; j < V; ++j) probs[r * V + j] = std::exp(lp[j]);
  }
  return lp_sum;
}

// Output-layer backward for completion rows; returns d/d hf for the segment.
std::vector<double> completion_rows_backward(const LmParams& params, const Activations& a, std::size_t first,
                                             std::span<const int> targets, const std::vector<double>& probs,
                                             double scale, Gradients& grads) {
  const auto& c = params.config();
  const auto& lay = params.layout();
  const std::size_t d = c.d_model;
  const std::size_t V = c.vocab_size;
  std::vector<double> dhf(a.rows * d, 0.0);
  std::vector<double> dlogits(V);
  const double* w_out = params.at(lay.w_out);
  double* dw_out = grads.at(lay.w_out);
  // d logprob / d logits = onehot(target) - softmax.
  for (std::size_t r = 0; r < a.rows - first; ++r) {
    const std::size_t row = first + r;
    for (std::size_t j = 0; j < V; ++j) dlogits[j] = -scale * probs[r * V + j];
    dlogits[static_cast<std::size_t>(targets[r])] += scale;
    matvec_t(dlogits.data(), w_out, d, V, &dhf[row * d], false);
    outer_acc(&a.hf[row * d], dlogits.data(), d, V, dw_out);
  }
  return dhf;
}

void check_completion(const TokenSeq& seq) {
  if (seq.boundary > seq.size()) throw Error(ErrorCode::ShapeMismatch, "boundary beyond length");
  if (seq.boundary == seq.size()) throw Error(ErrorCode::EmptyCompletion, "no completion tokens");
  if (seq.boundary == 0) throw Error(ErrorCode::EmptyPrompt, "completion needs a prompt prefix");
}

void check_grads(const LmParams& params, const Gradients& grads) {
  if (!(grads.config() == params.config())) throw Error(ErrorCode::ShapeMismatch, "gradient/param config differ");
}

}  // namespace

Matrix forward_logits(const LmParams& params, const TokenSeq& seq) {
  const auto& c = params.config();
  check_ids(c, seq.ids);
  Activations a;
  run_segment(params, seq.ids, nullptr, true, a);
  Matrix out{seq.size(), c.vocab_size, std::vector<double>(seq.size() * c.vocab_size)};
  const double* w_out = params.at(params.layout().w_out);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    matvec(&a.hf[t * c.d_model], w_out, c.d_model, c.vocab_size, &out.data[t * c.vocab_size]);
  }
  return out;
}

CompletionPass::CompletionPass(const LmParams& params, const TokenSeq& seq)
    : params_(&params), seq_(seq), acts_(std::make_unique<Activations>()) {
  check_ids(params.config(), seq.ids);
  check_completion(seq);
  // The final token's hidden state never feeds a target, so it is skipped.
  std::span<const int> inputs(seq.ids.data(), seq.size() - 1);
  run_segment(params, inputs, nullptr, true, *acts_);
  logprob_ = completion_rows(params, *acts_, seq.boundary - 1, seq_.completion(), probs_);
}

CompletionPass::~CompletionPass() = default;
CompletionPass::CompletionPass(CompletionPass&&) noexcept = default;
CompletionPass& CompletionPass::operator=(CompletionPass&&) noexcept = default;

void CompletionPass::backward(double scale, Gradients& grads) const {
  check_grads(*params_, grads);
  const auto dhf =
      completion_rows_backward(*params_, *acts_, seq_.boundary - 1, seq_.completion(), probs_, scale, grads);
  backward_segment(*params_, *acts_, dhf.data(), nullptr, nullptr, grads);
}

struct SharedPrefixPass::Item {
  Activations acts;
  std::vector<double> probs;
  std::size_t first = 0;
};

SharedPrefixPass::SharedPrefixPass(const LmParams& params, std::vector<TokenSeq> seqs)
    : params_(&params), seqs_(std::move(seqs)) {
  if (seqs_.empty()) return;
  std::size_t prefix = std::numeric_limits<std::size_t>::max();
  for (const auto& s : seqs_) {
    check_ids(params.config(), s.ids);
    check_completion(s);
    prefix = std::min(prefix, s.boundary - 1);
  }
  const auto& head = seqs_.front().ids;
  for (const auto& s : seqs_) {
    std::size_t i = 0;
    while (i < prefix && s.ids[i] == head[i]) ++i;
    prefix = i;
  }
  if (prefix > 0) {
    prefix_ = std::make_unique<Activations>();
    run_segment(params, std::span<const int>(head.data(), prefix), nullptr, false, *prefix_);
  }
  items_.reserve(seqs_.size());
  for (const auto& s : seqs_) {
    auto item = std::make_unique<Item>();
    std::span<const int> inputs(s.ids.data() + prefix, s.size() - 1 - prefix);
    run_segment(params, inputs, prefix_.get(), true, item->acts);
    item->first = s.boundary - 1 - prefix;
    logprobs_.push_back(completion_rows(params, item->acts, item->first, s.completion(), item->probs));
    items_.push_back(std::move(item));
  }
}

SharedPrefixPass::~SharedPrefixPass() = default;

std::size_t SharedPrefixPass::prefix_length() const { return prefix_ ? prefix_->rows : 0; }

void SharedPrefixPass::backward(std::span<const double> weights, Gradients& grads) const {
  check_grads(*params_, grads);
  if (weights.size() != seqs_.size()) throw Error(ErrorCode::ShapeMismatch, "one weight per sequence");
  const auto& c = params_->config();
  KvGrad shared(c.n_layers, prefix_length() * c.d_model);
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const Item& it = *items_[i];
    const auto dhf =
        completion_rows_backward(*params_, it.acts, it.first, seqs_[i].completion(), it.probs, weights[i], grads);
    backward_segment(*params_, it.acts, dhf.data(), nullptr, prefix_ ? &shared : nullptr, grads);
  }
  if (prefix_) backward_segment(*params_, *prefix_, nullptr, &shared, nullptr, grads);
}

double sequence_logprob(const LmParams& params, const TokenSeq& seq) {
  return CompletionPass(params, seq).logprob();
}

double sft_loss(const LmParams& params, const TokenSeq& seq) {
  CompletionPass pass(params, seq);
  return -pass.logprob() / static_cast<double>(pass.completion_tokens());
}

DecodeSession::DecodeSession(const LmParams& params)
    : params_(&params),
      keys_(params.config().n_layers),
      values_(params.config().n_layers) {}

std::vector<double> DecodeSession::step(int token) {
  const auto& c = params_->config();
  const auto& lay = params_->layout();
  if (pos_ >= c.context_len) {
    throw Error(ErrorCode::SeqTooLong, "decode past context " + std::to_string(c.context_len));
  }
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
    throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(token));
  }
  const std::size_t d = c.d_model;
  const std::size_t f = c.d_ff;
  const std::size_t t = pos_;
  const LmParams& P = *params_;

  std::vector<double> x(d), xhat(d), h(d), q(d), ctx(d), tmp(std::max(d, f)), pre(f), act(f);
  std::vector<double> probs(c.n_heads * (t + 1));
  double rstd = 0.0;
  const double* te = P.at(lay.tok_emb) + static_cast<std::size_t>(token) * d;
  const double* pe = P.at(lay.pos_emb) + t * d;
  for (std::size_t i = 0; i < d; ++i) x[i] = te[i] + pe[i];

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = lay.layers[l];
    layer_norm(x.data(), P.at(L.ln1_g), P.at(L.ln1_b), d, xhat.data(), &rstd, h.data());
    matvec(h.data(), P.at(L.wq), d, d, q.data());
    keys_[l].resize((t + 1) * d);
    values_[l].resize((t + 1) * d);
    matvec(h.data(), P.at(L.wk), d, d, &keys_[l][t * d]);
    matvec(h.data(), P.at(L.wv), d, d, &values_[l][t * d]);
    attend(q.data(), keys_[l].data(), values_[l].data(), t, c, probs.data(), t + 1, ctx.data());
    matvec(ctx.data(), P.at(L.wo), d, d, tmp.data());
    for (std::size_t i = 0; i < d; ++i) x[i] += tmp[i];

    layer_norm(x.data(), P.at(L.ln2_g), P.at(L.ln2_b), d, xhat.data(), &rstd, h.data());
    matvec(h.data(), P.at(L.w1), d, f, pre.data());
    const double* b1 = P.at(L.b1);
    for (std::size_t j = 0; j < f; ++j) {
      pre[j] += b1[j];
      act[j] = gelu(pre[j], gelu_tanh(pre[j]));
    }
    matvec(act.data(), P.at(L.w2), f, d, tmp.data());
    const double* b2 = P.at(L.b2);
    for (std::size_t i = 0; i < d; ++i) x[i] += tmp[i] + b2[i];
  }
  layer_norm(x.data(), P.at(lay.lnf_g), P.at(lay.lnf_b), d, xhat.data(), &rstd, h.data());
  std::vector<double> logits(c.vocab_size);
  matvec(h.data(), P.at(lay.w_out), d, c.vocab_size, logits.data());
  ++pos_;
  return logits;
}

}  // namespace fairjudge
