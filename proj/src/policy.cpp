#include "cdpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "cdpo/common.hpp"
#include "cdpo/kernels.hpp"

namespace cdpo::policy {

namespace {

constexpr double kRmsEps = 1e-5;
constexpr double kInitStd = 0.08;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

const char* const kReserved[4] = {"<bos>", "<eos>", "<unk>", "<sep>"};

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * kInvSqrt2)); }

double gelu_grad(double u) {
  return 0.5 * (1.0 + std::erf(u * kInvSqrt2)) +
         u * kInvSqrt2Pi * std::exp(-0.5 * u * u);
}

}  // namespace

// ---------------------------------------------------------------- tokenizer

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  for (const char* r : kReserved) words.erase(r);

  std::vector<std::string> vocab;
  vocab.reserve(words.size() + 4);
  for (const char* r : kReserved) vocab.emplace_back(r);
  vocab.insert(vocab.end(), words.begin(), words.end());
  return from_vocabulary(std::move(vocab));
}

Tokenizer Tokenizer::from_vocabulary(std::vector<std::string> vocabulary) {
  if (vocabulary.size() < 4) {
    throw ValidationError("tokenizer vocabulary is missing reserved entries");
  }
  for (int i = 0; i < 4; ++i) {
    if (vocabulary[static_cast<std::size_t>(i)] != kReserved[i]) {
      throw ValidationError("tokenizer vocabulary has a malformed reserved "
                            "block: slot " + std::to_string(i) + " is '" +
                            vocabulary[static_cast<std::size_t>(i)] + "'");
    }
  }
  Tokenizer tok;
  tok.vocabulary_ = std::move(vocabulary);
  tok.index_.reserve(tok.vocabulary_.size());
  for (std::size_t i = 0; i < tok.vocabulary_.size(); ++i) {
    tok.index_.emplace_back(tok.vocabulary_[i], static_cast<int>(i));
  }
  std::sort(tok.index_.begin(), tok.index_.end());
  for (std::size_t i = 1; i < tok.index_.size(); ++i) {
    if (tok.index_[i - 1].first == tok.index_[i].first) {
      throw ValidationError("tokenizer vocabulary contains duplicate word '" +
                            tok.index_[i].first + "'");
    }
  }
  return tok;
}

int Tokenizer::word_id(const std::string& word) const {
  auto it = std::lower_bound(
      index_.begin(), index_.end(), word,
      [](const auto& entry, const std::string& w) { return entry.first < w; });
  if (it != index_.end() && it->first == word) return it->second;
  return kUnk;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(word_id(w));
  return out;
}

std::string Tokenizer::decode(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocabulary_.size()) {
      throw ValidationError("decode: token id " + std::to_string(t) +
                            " outside vocabulary of size " +
                            std::to_string(vocabulary_.size()));
    }
    if (!out.empty()) out.push_back(' ');
    out += vocabulary_[static_cast<std::size_t>(t)];
  }
  return out;
}

// ------------------------------------------------------------------- layout

ParamLayout::ParamLayout(const ModelDims& dims) {
  const std::size_t v = dims.vocab, d = dims.embed;
  std::size_t at = 0;
  wte = at;
  at += v * d;
  wpe = at;
  at += dims.context * d;
  layers.resize(dims.layers);
  for (auto& l : layers) {
    l.wq = at;
    at += d * d;
    l.wk = at;
    at += d * d;
    l.wv = at;
    at += d * d;
    l.wo = at;
    at += d * d;
    l.w1 = at;
    at += 4 * d * d;
    l.w2 = at;
    at += 4 * d * d;
  }
  lm_head = at;
  at += v * d;
  total = at;
}

// -------------------------------------------------------------------- model

static void validate_dims(const ModelDims& dims) {
  if (dims.vocab < 4) throw ValidationError("model vocab must be >= 4");
  if (dims.embed == 0 || dims.layers == 0 || dims.heads == 0 ||
      dims.context == 0) {
    throw ValidationError("model dims must all be positive");
  }
  if (dims.embed % dims.heads != 0) {
    throw ValidationError("embed width " + std::to_string(dims.embed) +
                          " is not divisible by " + std::to_string(dims.heads) +
                          " heads");
  }
}

PolicyModel::PolicyModel(Tokenizer tokenizer, ModelDims dims,
                         std::uint64_t seed, InitMode init)
    : dims_(dims), seed_(seed), tokenizer_(std::move(tokenizer)) {
  if (dims_.vocab == 0) dims_.vocab = tokenizer_.vocab_size();
  if (dims_.vocab != tokenizer_.vocab_size()) {
    throw ValidationError("model vocab " + std::to_string(dims_.vocab) +
                          " does not match tokenizer vocab " +
                          std::to_string(tokenizer_.vocab_size()));
  }
  validate_dims(dims_);
  ParamLayout layout(dims_);
  params_.assign(layout.total, 0.0);
  if (init == InitMode::random) {
    DetRng rng(seed_);
    for (auto& p : params_) p = rng.normal() * kInitStd;
  }
}

ReferenceSnapshot::ReferenceSnapshot(const PolicyModel& model)
    : dims_(model.dims()),
      params_(model.parameters().begin(), model.parameters().end()) {}

ReferenceSnapshot snapshot_reference(const PolicyModel& model) {
  return ReferenceSnapshot(model);
}

// ------------------------------------------------------------------ forward

namespace {

struct LayerCache {
  std::vector<double> h_attn_in, a_in, a_inv_r;
  std::vector<double> q, k, v, attw, ctx;
  std::vector<double> h_mlp_in, m_in, m_inv_r;
  std::vector<double> u, g;
};

struct Cache {
  std::size_t n = 0;   // tokens incl. BOS
  std::size_t cs = 0;  // first completion position
  std::size_t np = 0;  // predicted positions
  std::vector<int> tokens;
  std::vector<double> x, inv_r0;
  std::vector<LayerCache> layers;
  std::vector<double> h_final, f_inv_r, f_in;
  std::vector<double> probs;  // np x V
  double logprob = 0.0;
};

void rmsnorm_rows(const double* x, double* y, double* inv_r, std::size_t n,
                  std::size_t d) {
  kernels::parallel_for(n, [&](std::size_t t) {
    const double* xr = x + t * d;
    double ms = kernels::dot(xr, xr, d) / static_cast<double>(d);
    double r = 1.0 / std::sqrt(ms + kRmsEps);
    inv_r[t] = r;
    double* yr = y + t * d;
    for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] * r;
  });
}

// dx (+)= d(rmsnorm)/dx applied to dy; x and inv_r are the forward inputs
void rmsnorm_backward_rows(const double* dy, const double* x,
                           const double* inv_r, std::size_t n, std::size_t d,
                           double* dx, bool accumulate) {
  kernels::parallel_for(n, [&](std::size_t t) {
    const double* dyr = dy + t * d;
    const double* xr = x + t * d;
    double r = inv_r[t];
    double s = kernels::dot(dyr, xr, d);
    double coef = r * r * r * s / static_cast<double>(d);
    double* dxr = dx + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      double v = dyr[i] * r - xr[i] * coef;
      dxr[i] = accumulate ? dxr[i] + v : v;
    }
  });
}

void check_token_span(std::span<const int> toks, std::size_t vocab,
                      const char* what) {
  if (toks.empty()) {
    throw ValidationError(std::string(what) + " token sequence is empty");
  }
  for (int t : toks) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ValidationError(std::string(what) + " contains token id " +
                            std::to_string(t) +
                            " outside vocabulary of size " +
                            std::to_string(vocab));
    }
  }
}

std::vector<int> assemble_tokens(const ModelDims& dims,
                                 std::span<const int> prompt,
                                 std::span<const int> completion) {
  check_token_span(prompt, dims.vocab, "prompt");
  check_token_span(completion, dims.vocab, "completion");
  std::size_t n = 1 + prompt.size() + completion.size();
  if (n > dims.context) {
    throw ValidationError(
        "sequence of " + std::to_string(n) +
        " tokens (with BOS) exceeds context window of " +
        std::to_string(dims.context) + "; refusing to truncate");
  }
  std::vector<int> toks;
  toks.reserve(n);
  toks.push_back(Tokenizer::kBos);
  toks.insert(toks.end(), prompt.begin(), prompt.end());
  toks.insert(toks.end(), completion.begin(), completion.end());
  return toks;
}

// Runs the transformer stack over cache.tokens, fills the cache, and
// returns the summed completion logprob. Prediction rows are the
// contiguous range [cs-1, n-2].
double forward_full(const ModelDims& dims, const double* params,
                    Cache& cache) {
  const std::size_t n = cache.tokens.size();
  const std::size_t d = dims.embed;
  const std::size_t h4 = 4 * d;
  const std::size_t nh = dims.heads;
  const std::size_t hd = d / nh;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const ParamLayout lay(dims);

  cache.n = n;
  cache.np = n - cache.cs;

  cache.x.assign(n * d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double* te = params + lay.wte +
                       static_cast<std::size_t>(cache.tokens[t]) * d;
    const double* pe = params + lay.wpe + t * d;
    double* xr = cache.x.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
  }

  std::vector<double> h(n * d);
  cache.inv_r0.assign(n, 0.0);
  rmsnorm_rows(cache.x.data(), h.data(), cache.inv_r0.data(), n, d);

  cache.layers.assign(dims.layers, {});
  for (std::size_t li = 0; li < dims.layers; ++li) {
    LayerCache& lc = cache.layers[li];
    const auto& lp = lay.layers[li];

    lc.h_attn_in = h;
    lc.a_in.assign(n * d, 0.0);
    lc.a_inv_r.assign(n, 0.0);
    rmsnorm_rows(lc.h_attn_in.data(), lc.a_in.data(), lc.a_inv_r.data(), n, d);

    lc.q.assign(n * d, 0.0);
    lc.k.assign(n * d, 0.0);
    lc.v.assign(n * d, 0.0);
    kernels::matmul_nt(lc.q.data(), lc.a_in.data(), params + lp.wq, n, d, d);
    kernels::matmul_nt(lc.k.data(), lc.a_in.data(), params + lp.wk, n, d, d);
    kernels::matmul_nt(lc.v.data(), lc.a_in.data(), params + lp.wv, n, d, d);

    lc.attw.assign(nh * n * n, 0.0);
    lc.ctx.assign(n * d, 0.0);
    kernels::parallel_for(nh * n, [&](std::size_t w) {
      const std::size_t hh = w / n;
      const std::size_t t = w % n;
      double* row = lc.attw.data() + (hh * n + t) * n;
      const double* qt = lc.q.data() + t * d + hh * hd;
      double mx = -1e300;
      for (std::size_t j = 0; j <= t; ++j) {
        row[j] = kernels::dot(qt, lc.k.data() + j * d + hh * hd, hd) *
                 inv_sqrt_hd;
        mx = std::max(mx, row[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      double inv = 1.0 / sum;
      double* ct = lc.ctx.data() + t * d + hh * hd;
      for (std::size_t j = 0; j <= t; ++j) {
        row[j] *= inv;
        kernels::axpy(ct, lc.v.data() + j * d + hh * hd, row[j], hd);
      }
    });

    // h += ctx * Wo^T
    std::vector<double> ao(n * d, 0.0);
    kernels::matmul_nt(ao.data(), lc.ctx.data(), params + lp.wo, n, d, d);
    kernels::parallel_for(n, [&](std::size_t t) {
      kernels::axpy(h.data() + t * d, ao.data() + t * d, 1.0, d);
    });

    lc.h_mlp_in = h;
    lc.m_in.assign(n * d, 0.0);
    lc.m_inv_r.assign(n, 0.0);
    rmsnorm_rows(lc.h_mlp_in.data(), lc.m_in.data(), lc.m_inv_r.data(), n, d);

    lc.u.assign(n * h4, 0.0);
    kernels::matmul_nt(lc.u.data(), lc.m_in.data(), params + lp.w1, n, h4, d);

    lc.g.assign(n * h4, 0.0);
    kernels::parallel_for(n, [&](std::size_t t) {
      const double* ur = lc.u.data() + t * h4;
      double* gr = lc.g.data() + t * h4;
      for (std::size_t i = 0; i < h4; ++i) gr[i] = gelu(ur[i]);
    });

    // h += g * W2^T
    std::vector<double> mo(n * d, 0.0);
    kernels::matmul_nt(mo.data(), lc.g.data(), params + lp.w2, n, d, h4);
    kernels::parallel_for(n, [&](std::size_t t) {
      kernels::axpy(h.data() + t * d, mo.data() + t * d, 1.0, d);
    });
  }

  cache.h_final = h;
  cache.f_in.assign(n * d, 0.0);
  cache.f_inv_r.assign(n, 0.0);
  rmsnorm_rows(cache.h_final.data(), cache.f_in.data(), cache.f_inv_r.data(),
               n, d);

  const std::size_t np = cache.np;
  const std::size_t first = cache.cs - 1;
  std::vector<double> logits(np * dims.vocab, 0.0);
  kernels::matmul_nt(logits.data(), cache.f_in.data() + first * d,
                     params + lay.lm_head, np, dims.vocab, d);

  cache.probs.assign(np * dims.vocab, 0.0);
  std::vector<double> contrib(np, 0.0);
  kernels::parallel_for(np, [&](std::size_t r) {
    const double* lr = logits.data() + r * dims.vocab;
    double mx = lr[0];
    for (std::size_t j = 1; j < dims.vocab; ++j) mx = std::max(mx, lr[j]);
    double sum = 0.0;
    double* pr = cache.probs.data() + r * dims.vocab;
    for (std::size_t j = 0; j < dims.vocab; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      sum += pr[j];
    }
    double inv = 1.0 / sum;
    for (std::size_t j = 0; j < dims.vocab; ++j) pr[j] *= inv;
    const std::size_t target =
        static_cast<std::size_t>(cache.tokens[cache.cs + r]);
    contrib[r] = lr[target] - (mx + std::log(sum));
  });
  double lp = 0.0;
  for (std::size_t r = 0; r < np; ++r) lp += contrib[r];
  cache.logprob = lp;
  return lp;
}

}  // namespace

double sequence_logprob(const ModelDims& dims, std::span<const double> params,
                        std::span<const int> prompt,
                        std::span<const int> completion) {
  Cache cache;
  cache.tokens = assemble_tokens(dims, prompt, completion);
  cache.cs = 1 + prompt.size();
  return forward_full(dims, params.data(), cache);
}

double sequence_logprob(const PolicyModel& model, std::span<const int> prompt,
                        std::span<const int> completion) {
  return sequence_logprob(model.dims(), model.parameters(), prompt,
                          completion);
}

double sequence_logprob(const ReferenceSnapshot& ref,
                        std::span<const int> prompt,
                        std::span<const int> completion) {
  return sequence_logprob(ref.dims(), ref.parameters(), prompt, completion);
}

// ----------------------------------------------------------------- backward

namespace {

void backward_accumulate(const ModelDims& dims, const double* params,
                         const Cache& cache, double scale, double* grad) {
  const std::size_t n = cache.n;
  const std::size_t d = dims.embed;
  const std::size_t h4 = 4 * d;
  const std::size_t nh = dims.heads;
  const std::size_t hd = d / nh;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t np = cache.np;
  const std::size_t first = cache.cs - 1;
  const ParamLayout lay(dims);

  // dlogits over the prediction rows: scale * (onehot(target) - p)
  std::vector<double> dlogits(np * dims.vocab, 0.0);
  kernels::parallel_for(np, [&](std::size_t r) {
    const double* pr = cache.probs.data() + r * dims.vocab;
    double* dr = dlogits.data() + r * dims.vocab;
    for (std::size_t j = 0; j < dims.vocab; ++j) dr[j] = -scale * pr[j];
    dr[static_cast<std::size_t>(cache.tokens[cache.cs + r])] += scale;
  });

  // lm_head grad and d(f_in)
  kernels::matmul_tn_acc(grad + lay.lm_head, dlogits.data(),
                         cache.f_in.data() + first * d, np, dims.vocab, d);
  std::vector<double> d_f_in(n * d, 0.0);
  kernels::matmul_nn_acc(d_f_in.data() + first * d, dlogits.data(),
                         params + lay.lm_head, np, dims.vocab, d);

  std::vector<double> dh(n * d, 0.0);
  rmsnorm_backward_rows(d_f_in.data(), cache.h_final.data(),
                        cache.f_inv_r.data(), n, d, dh.data(), false);

  std::vector<double> dg(n * h4), du(n * h4), dm_in(n * d);
  std::vector<double> dctx(n * d), dq(n * d), dk(n * d), dv(n * d);
  std::vector<double> da_in(n * d), ds(nh * n * n);

  for (std::size_t li = dims.layers; li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    const auto& lp = lay.layers[li];

    // ---- MLP block; dh is the gradient on the block output
    kernels::matmul_tn_acc(grad + lp.w2, dh.data(), lc.g.data(), n, d, h4);
    std::fill(dg.begin(), dg.end(), 0.0);
    kernels::matmul_nn_acc(dg.data(), dh.data(), params + lp.w2, n, d, h4);

    kernels::parallel_for(n, [&](std::size_t t) {
      const double* ur = lc.u.data() + t * h4;
      const double* dgr = dg.data() + t * h4;
      double* dur = du.data() + t * h4;
      for (std::size_t i = 0; i < h4; ++i) dur[i] = dgr[i] * gelu_grad(ur[i]);
    });

    kernels::matmul_tn_acc(grad + lp.w1, du.data(), lc.m_in.data(), n, h4, d);
    std::fill(dm_in.begin(), dm_in.end(), 0.0);
    kernels::matmul_nn_acc(dm_in.data(), du.data(), params + lp.w1, n, h4, d);
    rmsnorm_backward_rows(dm_in.data(), lc.h_mlp_in.data(), lc.m_inv_r.data(),
                          n, d, dh.data(), true);

    // ---- attention block; dh now holds the gradient on its output
    kernels::matmul_tn_acc(grad + lp.wo, dh.data(), lc.ctx.data(), n, d, d);
    std::fill(dctx.begin(), dctx.end(), 0.0);
    kernels::matmul_nn_acc(dctx.data(), dh.data(), params + lp.wo, n, d, d);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);

    // pass 1: per (head, query) softmax backward and dq
    kernels::parallel_for(nh * n, [&](std::size_t w) {
      const std::size_t hh = w / n;
      const std::size_t t = w % n;
      const double* arow = lc.attw.data() + (hh * n + t) * n;
      double* srow = ds.data() + (hh * n + t) * n;
      const double* dct = dctx.data() + t * d + hh * hd;
      double dot_aw = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        srow[j] = kernels::dot(dct, lc.v.data() + j * d + hh * hd, hd);
        dot_aw += arow[j] * srow[j];
      }
      double* dqt = dq.data() + t * d + hh * hd;
      for (std::size_t j = 0; j <= t; ++j) {
        srow[j] = arow[j] * (srow[j] - dot_aw);
        kernels::axpy(dqt, lc.k.data() + j * d + hh * hd,
                      srow[j] * inv_sqrt_hd, hd);
      }
    });

    // pass 2: per (head, key) dk and dv
    kernels::parallel_for(nh * n, [&](std::size_t w) {
      const std::size_t hh = w / n;
      const std::size_t j = w % n;
      double* dkj = dk.data() + j * d + hh * hd;
      double* dvj = dv.data() + j * d + hh * hd;
      for (std::size_t t = j; t < n; ++t) {
        const double s = ds[(hh * n + t) * n + j];
        kernels::axpy(dkj, lc.q.data() + t * d + hh * hd, s * inv_sqrt_hd, hd);
        const double a = lc.attw[(hh * n + t) * n + j];
        kernels::axpy(dvj, dctx.data() + t * d + hh * hd, a, hd);
      }
    });

    kernels::matmul_tn_acc(grad + lp.wq, dq.data(), lc.a_in.data(), n, d, d);
    kernels::matmul_tn_acc(grad + lp.wk, dk.data(), lc.a_in.data(), n, d, d);
    kernels::matmul_tn_acc(grad + lp.wv, dv.data(), lc.a_in.data(), n, d, d);

    std::fill(da_in.begin(), da_in.end(), 0.0);
    kernels::matmul_nn_acc(da_in.data(), dq.data(), params + lp.wq, n, d, d);
    kernels::matmul_nn_acc(da_in.data(), dk.data(), params + lp.wk, n, d, d);
    kernels::matmul_nn_acc(da_in.data(), dv.data(), params + lp.wv, n, d, d);
    rmsnorm_backward_rows(da_in.data(), lc.h_attn_in.data(),
                          lc.a_inv_r.data(), n, d, dh.data(), true);
  }

  std::vector<double> dx(n * d, 0.0);
  rmsnorm_backward_rows(dh.data(), cache.x.data(), cache.inv_r0.data(), n, d,
                        dx.data(), false);
  // token rows can repeat, so the embedding scatter stays serial
  for (std::size_t t = 0; t < n; ++t) {
    kernels::axpy(grad + lay.wte +
                      static_cast<std::size_t>(cache.tokens[t]) * d,
                  dx.data() + t * d, 1.0, d);
    kernels::axpy(grad + lay.wpe + t * d, dx.data() + t * d, 1.0, d);
  }
}

}  // namespace

struct SequenceGrad::Impl {
  ModelDims dims;
  const double* params;
  Cache cache;
};

SequenceGrad::SequenceGrad(const ModelDims& dims,
                           std::span<const double> params,
                           std::span<const int> prompt,
                           std::span<const int> completion)
    : impl_(std::make_unique<Impl>()) {
  impl_->dims = dims;
  impl_->params = params.data();
  impl_->cache.tokens = assemble_tokens(dims, prompt, completion);
  impl_->cache.cs = 1 + prompt.size();
  forward_full(dims, impl_->params, impl_->cache);
}

SequenceGrad::~SequenceGrad() = default;
SequenceGrad::SequenceGrad(SequenceGrad&&) noexcept = default;
SequenceGrad& SequenceGrad::operator=(SequenceGrad&&) noexcept = default;

double SequenceGrad::logprob() const { return impl_->cache.logprob; }

void SequenceGrad::accumulate_gradient(double scale,
                                       std::span<double> grad) const {
  ParamLayout lay(impl_->dims);
  if (grad.size() != lay.total) {
    throw ValidationError("gradient buffer has " +
                          std::to_string(grad.size()) + " slots, expected " +
                          std::to_string(lay.total));
  }
  backward_accumulate(impl_->dims, impl_->params, impl_->cache, scale,
                      grad.data());
}

std::vector<double> logprob_gradient(const PolicyModel& model,
                                     std::span<const int> prompt,
                                     std::span<const int> completion) {
  SequenceGrad sg(model.dims(), model.parameters(), prompt, completion);
  std::vector<double> grad(ParamLayout(model.dims()).total, 0.0);
  sg.accumulate_gradient(1.0, grad);
  return grad;
}

std::vector<std::vector<double>> next_token_distributions(
    const ModelDims& dims, std::span<const double> params,
    std::span<const int> tokens) {
  check_token_span(tokens, dims.vocab, "input");
  if (1 + tokens.size() > dims.context) {
    throw ValidationError("sequence exceeds context window");
  }
  Cache cache;
  cache.tokens.reserve(tokens.size() + 1);
  cache.tokens.push_back(Tokenizer::kBos);
  cache.tokens.insert(cache.tokens.end(), tokens.begin(), tokens.end());
  cache.cs = 1;  // every position after BOS counts as predicted
  forward_full(dims, params.data(), cache);

  std::vector<std::vector<double>> out;
  out.reserve(cache.np);
  for (std::size_t r = 0; r < cache.np; ++r) {
    out.emplace_back(cache.probs.begin() +
                         static_cast<std::ptrdiff_t>(r * dims.vocab),
                     cache.probs.begin() +
                         static_cast<std::ptrdiff_t>((r + 1) * dims.vocab));
  }
  return out;
}

// -------------------------------------------------------------- persistence

namespace {

constexpr char kMagic[4] = {'C', 'D', 'P', 'O'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

struct Reader {
  const char* p;
  const char* end;
  template <typename T>
  T take() {
    if (end - p < static_cast<std::ptrdiff_t>(sizeof(T))) {
      throw IoError("model file ends mid-record");
    }
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }
  std::string take_string(std::size_t len) {
    if (end - p < static_cast<std::ptrdiff_t>(len)) {
      throw IoError("model file ends mid-record");
    }
    std::string s(p, len);
    p += len;
    return s;
  }
};

}  // namespace

void save_model(const PolicyModel& model, const std::string& path) {
  const auto& dims = model.dims();
  std::string buf;
  buf.append(kMagic, 4);
  put(buf, kFormatVersion);
  put(buf, static_cast<std::uint64_t>(dims.vocab));
  put(buf, static_cast<std::uint64_t>(dims.embed));
  put(buf, static_cast<std::uint64_t>(dims.layers));
  put(buf, static_cast<std::uint64_t>(dims.heads));
  put(buf, static_cast<std::uint64_t>(dims.context));
  put(buf, model.seed());
  const auto& vocab = model.tokenizer().vocabulary();
  put(buf, static_cast<std::uint64_t>(vocab.size()));
  for (const auto& w : vocab) {
    put(buf, static_cast<std::uint32_t>(w.size()));
    buf.append(w);
  }
  auto params = model.parameters();
  put(buf, static_cast<std::uint64_t>(params.size()));
  buf.append(reinterpret_cast<const char*>(params.data()),
             params.size() * sizeof(double));
  put(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

PolicyModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();

  if (buf.size() < 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t) ||
      std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw ValidationError("'" + path + "' is not a model file");
  }
  const std::uint64_t stored_sum =
      [&] {
        std::uint64_t v;
        std::memcpy(&v, buf.data() + buf.size() - sizeof(v), sizeof(v));
        return v;
      }();
  const std::uint64_t actual_sum =
      fnv1a64(buf.data(), buf.size() - sizeof(std::uint64_t));

  Reader r{buf.data() + 4, buf.data() + buf.size() - sizeof(std::uint64_t)};
  const auto version = r.take<std::uint32_t>();
  if (version != kFormatVersion) {
    throw ValidationError("model file '" + path + "' has format version " +
                          std::to_string(version) + ", this build reads " +
                          std::to_string(kFormatVersion));
  }
  if (stored_sum != actual_sum) {
    throw IoError("model file '" + path +
                  "' failed its checksum (corrupt or truncated)");
  }

  ModelDims dims;
  dims.vocab = static_cast<std::size_t>(r.take<std::uint64_t>());
  dims.embed = static_cast<std::size_t>(r.take<std::uint64_t>());
  dims.layers = static_cast<std::size_t>(r.take<std::uint64_t>());
  dims.heads = static_cast<std::size_t>(r.take<std::uint64_t>());
  dims.context = static_cast<std::size_t>(r.take<std::uint64_t>());
  const std::uint64_t seed = r.take<std::uint64_t>();

  const auto vocab_count = r.take<std::uint64_t>();
  std::vector<std::string> vocab;
  vocab.reserve(vocab_count);
  for (std::uint64_t i = 0; i < vocab_count; ++i) {
    const auto len = r.take<std::uint32_t>();
    vocab.push_back(r.take_string(len));
  }
  Tokenizer tok = Tokenizer::from_vocabulary(std::move(vocab));

  const auto param_count = r.take<std::uint64_t>();
  ParamLayout lay(dims);
  if (param_count != lay.total) {
    throw IoError("model file '" + path + "' holds " +
                  std::to_string(param_count) + " parameters, dims imply " +
                  std::to_string(lay.total));
  }

  PolicyModel model(std::move(tok), dims, seed, InitMode::zeros);
  auto dst = model.mutable_parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = r.take<double>();
  }
  return model;
}

}  // namespace cdpo::policy
