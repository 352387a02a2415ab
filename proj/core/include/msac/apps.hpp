#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "msac/io.hpp"
#include "msac/sac.hpp"

namespace msac {

// Learned markers distinguishing the two halves of a concatenated image pair:
// either added to each half (additive) or appended as extra channels (channel).
enum class SegMode { additive, channel };

struct SegmentAugmentation {
  SegMode mode = SegMode::additive;
  Tensor x_seg;
  Tensor z_seg;

  std::size_t d_seg() const { return x_seg.dim(2); }
  void validate(std::size_t n, std::size_t m, std::size_t d) const;
};

struct SimilarityModel {
  SegmentAugmentation augmentation;
  std::vector<MSACParams> stack;
  Tensor score_w;  // [d_o]
  double score_b = 0.0;
};

struct ToyLMModel {
  Tensor embedding;  // [vocab, d]
  std::vector<MSACParams> stack;
  Tensor out_proj;  // [vocab, d_o]

  std::size_t vocab() const { return embedding.dim(0); }
};

Tensor concat_images(const Tensor& x, const Tensor& z);  // [N,M,d]+[N,M,d] -> [N,2M,d]
std::pair<Tensor, Tensor> apply_segment_augmentation(const Tensor& x, const Tensor& z,
                                                     const SegmentAugmentation& aug);
double similarity_score(const Tensor& x, const Tensor& z, const SimilarityModel& model);
// Log-probabilities per position, [len, vocab]; attention is bidirectional.
Tensor lm_forward(const std::vector<std::size_t>& tokens, const ToyLMModel& model);

struct CharVocab {
  std::string chars;  // sorted unique characters
  std::size_t size() const { return chars.size(); }
  std::vector<std::size_t> encode(const std::string& text) const;
};
CharVocab make_char_vocab(const std::string& text);

ToyLMModel make_lm_model(Rng& rng, std::size_t vocab, const MsacConfig& cfg,
                         std::size_t layers, std::size_t max_len);
SimilarityModel make_similarity_model(Rng& rng, const MsacConfig& cfg, SegMode mode,
                                      std::size_t d_seg, std::size_t n, std::size_t m,
                                      std::size_t layers);

struct SimilarityExample {
  Tensor x, z;
  bool same = false;
};
// Same-pairs are two noisy copies of one base image, different-pairs two
// independent bases; gaussian noise with the given sigma.
std::vector<SimilarityExample> make_similarity_dataset(Rng& rng, std::size_t pairs,
                                                       std::size_t n, std::size_t m,
                                                       std::size_t d, double noise);
void save_similarity_dataset(const std::string& dir,
                             const std::vector<SimilarityExample>& examples);
std::vector<SimilarityExample> load_similarity_dataset(const std::string& dir);

struct TrainConfig {
  double lr = 0.1;
  std::size_t steps = 100;
  std::uint64_t seed = 42;
};

struct TrainResult {
  std::vector<double> losses;
  bool diverged = false;
};

// Plain full-batch gradient descent: theta <- theta - lr * grad. No momentum
// or adaptive state, so a fixed seed reproduces the run bit for bit.
TrainResult train_gd(const std::vector<ad::NodePtr>& params,
                     const std::function<ad::NodePtr()>& loss_fn, const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_step = nullptr);

TrainResult train_lm(ToyLMModel& model, const std::vector<std::size_t>& tokens,
                     const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_step = nullptr);
TrainResult train_similarity(SimilarityModel& model,
                             const std::vector<SimilarityExample>& dataset,
                             const TrainConfig& cfg,
                             const std::function<void(std::size_t, double)>& on_step = nullptr);

double mean_cross_entropy(const ToyLMModel& model, const std::vector<std::size_t>& tokens);
double similarity_accuracy(const SimilarityModel& model,
                           const std::vector<SimilarityExample>& dataset);

// Model save/load: MST1 tensors plus the shared manifest layout.
void save_lm_model(const ToyLMModel& model, const std::string& dir);
ToyLMModel load_lm_model(const std::string& dir);
void save_similarity_model(const SimilarityModel& model, const std::string& dir);
SimilarityModel load_similarity_model(const std::string& dir);

namespace ad {

struct LMModelNodes {
  NodePtr embedding;
  std::vector<MSACParamNodes> stack;
  NodePtr out_proj;
};
struct SimilarityModelNodes {
  SegMode mode = SegMode::additive;
  NodePtr x_seg, z_seg;
  std::vector<MSACParamNodes> stack;
  NodePtr score_w, score_b;
};

LMModelNodes lift(const ToyLMModel& m);
SimilarityModelNodes lift(const SimilarityModel& m);
std::vector<NodePtr> collect_leaves(const LMModelNodes& m);
std::vector<NodePtr> collect_leaves(const SimilarityModelNodes& m);

NodePtr concat_images(const NodePtr& x, const NodePtr& z);
std::pair<NodePtr, NodePtr> apply_segment_augmentation(const NodePtr& x, const NodePtr& z,
                                                       SegMode mode, const NodePtr& x_seg,
                                                       const NodePtr& z_seg);
NodePtr similarity_logit(const SimilarityModelNodes& m, const NodePtr& x, const NodePtr& z);
NodePtr lm_log_probs(const LMModelNodes& m, const std::vector<std::size_t>& tokens);
NodePtr lm_loss(const LMModelNodes& m, const std::vector<std::size_t>& tokens);

}  // namespace ad

}  // namespace msac
