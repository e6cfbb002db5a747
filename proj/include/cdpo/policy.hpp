#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdpo::policy {

// Word-level tokenizer with UNK fallback. Vocabulary = 4 reserved units
// followed by the sorted unique words of the corpus it was built from.
class Tokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kSep = 3;

  Tokenizer() = default;

  // Vocabulary from the whitespace-separated words of `texts`.
  static Tokenizer build(const std::vector<std::string>& texts);

  // Reconstruction from a stored vocabulary (model files).
  static Tokenizer from_vocabulary(std::vector<std::string> vocabulary);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> tokens) const;

  // id of a word, or kUnk when out of vocabulary
  int word_id(const std::string& word) const;

  std::size_t vocab_size() const { return vocabulary_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

 private:
  std::vector<std::string> vocabulary_;
  std::vector<std::pair<std::string, int>> index_;  // sorted word -> id
};

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t context = 256;

  bool operator==(const ModelDims&) const = default;
};

enum class InitMode { zeros, random };

// Flat parameter offsets; the serialized order is exactly this order:
// wte, wpe, then per layer wq wk wv wo w1 w2, then lm_head.
struct ParamLayout {
  struct Layer {
    std::size_t wq, wk, wv, wo, w1, w2;
  };
  std::size_t wte = 0;
  std::size_t wpe = 0;
  std::vector<Layer> layers;
  std::size_t lm_head = 0;
  std::size_t total = 0;

  explicit ParamLayout(const ModelDims& dims);
};

// Tiny decoder-only causal LM: token + position embeddings, pre-norm
// attention/MLP blocks with residuals, final norm, output projection.
// RMS norms carry no gain so the all-zero parameter vector yields the
// uniform next-token distribution at every position. All math is double
// precision.
class PolicyModel {
 public:
  PolicyModel(Tokenizer tokenizer, ModelDims dims, std::uint64_t seed,
              InitMode init);

  const ModelDims& dims() const { return dims_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }

 private:
  ModelDims dims_;
  std::uint64_t seed_ = 0;
  Tokenizer tokenizer_;
  std::vector<double> params_;
};

// Frozen deep copy of a model's parameters, immutable by construction.
class ReferenceSnapshot {
 public:
  explicit ReferenceSnapshot(const PolicyModel& model);

  const ModelDims& dims() const { return dims_; }
  std::span<const double> parameters() const { return params_; }

 private:
  ModelDims dims_;
  std::vector<double> params_;
};

ReferenceSnapshot snapshot_reference(const PolicyModel& model);

// Sum over completion positions of log p(token | prompt + earlier
// completion tokens). A BOS token is prepended internally; prompt and
// completion must be nonempty and 1 + |prompt| + |completion| must fit
// the context window.
double sequence_logprob(const ModelDims& dims, std::span<const double> params,
                        std::span<const int> prompt,
                        std::span<const int> completion);
double sequence_logprob(const PolicyModel& model, std::span<const int> prompt,
                        std::span<const int> completion);
double sequence_logprob(const ReferenceSnapshot& ref,
                        std::span<const int> prompt,
                        std::span<const int> completion);

// Exact analytic gradient of sequence_logprob with respect to every
// parameter.
std::vector<double> logprob_gradient(const PolicyModel& model,
                                     std::span<const int> prompt,
                                     std::span<const int> completion);

// Forward pass with cached activations; lets the trainer score a
// sequence first and push the loss scale through the backward pass
// afterwards. accumulate_gradient adds scale * d(logprob)/d(theta).
class SequenceGrad {
 public:
  SequenceGrad(const ModelDims& dims, std::span<const double> params,
               std::span<const int> prompt, std::span<const int> completion);
  ~SequenceGrad();
  SequenceGrad(SequenceGrad&&) noexcept;
  SequenceGrad& operator=(SequenceGrad&&) noexcept;

  double logprob() const;
  void accumulate_gradient(double scale, std::span<double> grad) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Per-position next-token distributions for the given sequence (BOS
// prepended internally). Returns tokens.size() rows; row i is the
// distribution the model assigns to tokens[i] given everything before
// it, so out[i][tokens[i]] is the per-token probability.
std::vector<std::vector<double>> next_token_distributions(
    const ModelDims& dims, std::span<const double> params,
    std::span<const int> tokens);

// Binary model file: header (magic, format version, dims, seed),
// tokenizer table, parameter array in layout order, FNV-1a checksum
// trailer. Round-trips bit-exactly.
void save_model(const PolicyModel& model, const std::string& path);
PolicyModel load_model(const std::string& path);

}  // namespace cdpo::policy
