#include "msac/apps.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace msac {

void SegmentAugmentation::validate(std::size_t n, std::size_t m, std::size_t d) const {
  require(x_seg.rank() == 3 && z_seg.rank() == 3, "segment augmentation: segments must be rank 3");
  require(x_seg.same_shape(z_seg), "segment augmentation: x_seg and z_seg must share shape");
  require(x_seg.dim(0) == n && x_seg.dim(1) == m,
          "segment augmentation: segment spatial size must match the images");
  if (mode == SegMode::additive)
    require(x_seg.dim(2) == d, "segment augmentation: additive segments must match image channels");
  else
    require(x_seg.dim(2) >= 1, "segment augmentation: channel segments need d_seg >= 1");
}

namespace ad {

NodePtr concat_images(const NodePtr& x, const NodePtr& z) {
  require(x->value.rank() == 3 && x->value.same_shape(z->value),
          "concat_images: images must share shape [N,M,d], got " +
              shape_to_string(x->value.shape()) + " vs " + shape_to_string(z->value.shape()));
  // Column concatenation via the channel-concat primitive: swing the column
  // axis to the back, join, swing it home.
  NodePtr xs = permute(x, {0, 2, 1});
  NodePtr zs = permute(z, {0, 2, 1});
  return permute(concat_last_axis({xs, zs}), {0, 2, 1});
}

std::pair<NodePtr, NodePtr> apply_segment_augmentation(const NodePtr& x, const NodePtr& z,
                                                       SegMode mode, const NodePtr& x_seg,
                                                       const NodePtr& z_seg) {
  if (mode == SegMode::additive) return {add(x, x_seg), add(z, z_seg)};
  return {concat_last_axis({x, x_seg}), concat_last_axis({z, z_seg})};
}

NodePtr similarity_logit(const SimilarityModelNodes& m, const NodePtr& x, const NodePtr& z) {
  auto [xa, za] = apply_segment_augmentation(x, z, m.mode, m.x_seg, m.z_seg);
  NodePtr h = concat_images(xa, za);
  for (const MSACParamNodes& layer : m.stack) h = msac(h, layer);
  NodePtr pooled = spatial_mean(h);
  return add(dot(m.score_w, pooled), m.score_b);
}

NodePtr lm_log_probs(const LMModelNodes& m, const std::vector<std::size_t>& tokens) {
  require(!tokens.empty(), "lm_forward: empty token sequence");
  NodePtr h = gather_rows(m.embedding, tokens);  // [1, len, d]
  for (const MSACParamNodes& layer : m.stack) h = msac_1d(h, layer);
  std::size_t vocab = m.out_proj->value.dim(0), d_o = m.out_proj->value.dim(1);
  NodePtr proj = conv_bank(h, reshape(m.out_proj, Shape{vocab, 1, 1, d_o}));  // [1,len,vocab]
  NodePtr lsm = log_softmax_over_axes(proj, {2});
  return reshape(lsm, Shape{tokens.size(), vocab});
}

NodePtr lm_loss(const LMModelNodes& m, const std::vector<std::size_t>& tokens) {
  NodePtr lsm = lm_log_probs(m, tokens);
  std::size_t vocab = lsm->value.dim(1);
  // Positionwise cross entropy against the tokens themselves, no causal mask.
  Tensor mask(Shape{tokens.size(), vocab});
  for (std::size_t t = 0; t < tokens.size(); ++t) mask[t * vocab + tokens[t]] = 1.0;
  return scale(sum(mul_by(lsm, std::move(mask))), -1.0 / static_cast<double>(tokens.size()));
}

LMModelNodes lift(const ToyLMModel& m) {
  LMModelNodes nodes;
  nodes.embedding = leaf(m.embedding, "embedding");
  for (const MSACParams& layer : m.stack) nodes.stack.push_back(lift(layer));
  nodes.out_proj = leaf(m.out_proj, "out_proj");
  return nodes;
}

SimilarityModelNodes lift(const SimilarityModel& m) {
  SimilarityModelNodes nodes;
  nodes.mode = m.augmentation.mode;
  nodes.x_seg = leaf(m.augmentation.x_seg, "x_seg");
  nodes.z_seg = leaf(m.augmentation.z_seg, "z_seg");
  for (const MSACParams& layer : m.stack) nodes.stack.push_back(lift(layer));
  nodes.score_w = leaf(m.score_w, "score_w");
  nodes.score_b = leaf(Tensor::scalar(m.score_b), "score_b");
  return nodes;
}

std::vector<NodePtr> collect_leaves(const LMModelNodes& m) {
  std::vector<NodePtr> out{m.embedding};
  for (const MSACParamNodes& layer : m.stack) collect_leaves(layer, out);
  out.push_back(m.out_proj);
  return out;
}

std::vector<NodePtr> collect_leaves(const SimilarityModelNodes& m) {
  std::vector<NodePtr> out{m.x_seg, m.z_seg};
  for (const MSACParamNodes& layer : m.stack) collect_leaves(layer, out);
  out.push_back(m.score_w);
  out.push_back(m.score_b);
  return out;
}

}  // namespace ad

Tensor concat_images(const Tensor& x, const Tensor& z) {
  return ad::concat_images(ad::leaf(x), ad::leaf(z))->value;
}

std::pair<Tensor, Tensor> apply_segment_augmentation(const Tensor& x, const Tensor& z,
                                                     const SegmentAugmentation& aug) {
  require(x.rank() == 3 && x.same_shape(z), "apply_segment_augmentation: images must share shape");
  aug.validate(x.dim(0), x.dim(1), x.dim(2));
  auto [xa, za] = ad::apply_segment_augmentation(ad::leaf(x), ad::leaf(z), aug.mode,
                                                 ad::leaf(aug.x_seg), ad::leaf(aug.z_seg));
  return {xa->value, za->value};
}

double similarity_score(const Tensor& x, const Tensor& z, const SimilarityModel& model) {
  ad::SimilarityModelNodes nodes = ad::lift(model);
  ad::NodePtr p = ad::sigmoid(ad::similarity_logit(nodes, ad::leaf(x), ad::leaf(z)));
  double v = p->value.item();
  if (!std::isfinite(v)) throw std::runtime_error("similarity_score: non-finite activation");
  return v;
}

Tensor lm_forward(const std::vector<std::size_t>& tokens, const ToyLMModel& model) {
  return ad::lm_log_probs(ad::lift(model), tokens)->value;
}

CharVocab make_char_vocab(const std::string& text) {
  std::set<char> uniq(text.begin(), text.end());
  CharVocab v;
  v.chars.assign(uniq.begin(), uniq.end());
  require(v.size() >= 2, "char vocab: need at least 2 distinct characters");
  return v;
}

std::vector<std::size_t> CharVocab::encode(const std::string& text) const {
  std::vector<std::size_t> ids;
  for (char c : text) {
    std::size_t pos = chars.find(c);
    require(pos != std::string::npos, std::string("char vocab: unknown character '") + c + "'");
    ids.push_back(pos);
  }
  return ids;
}

ToyLMModel make_lm_model(Rng& rng, std::size_t vocab, const MsacConfig& cfg,
                         std::size_t layers, std::size_t max_len) {
  require(vocab >= 2, "lm model: vocabulary must have at least 2 entries");
  require(layers >= 1, "lm model: need at least one layer");
  for (auto [n, m] : cfg.scales)
    require(n == 1, "lm model: scales must be 1 x m for sentence input");
  ToyLMModel model;
  model.embedding = rng.tensor({vocab, cfg.d}, -0.5, 0.5);
  for (std::size_t l = 0; l < layers; ++l) {
    MsacConfig layer_cfg = cfg;
    layer_cfg.d = (l == 0) ? cfg.d : cfg.d_o;
    model.stack.push_back(make_msac_params(rng, layer_cfg, 1, max_len));
  }
  model.out_proj = init_filter_bank(rng, {vocab, cfg.d_o}, cfg.d_o);
  return model;
}

SimilarityModel make_similarity_model(Rng& rng, const MsacConfig& cfg, SegMode mode,
                                      std::size_t d_seg, std::size_t n, std::size_t m,
                                      std::size_t layers) {
  require(layers >= 1, "similarity model: need at least one layer");
  SimilarityModel model;
  model.augmentation.mode = mode;
  std::size_t seg_channels = mode == SegMode::additive ? cfg.d : d_seg;
  model.augmentation.x_seg = rng.tensor({n, m, seg_channels}, -0.5, 0.5);
  model.augmentation.z_seg = rng.tensor({n, m, seg_channels}, -0.5, 0.5);

  std::size_t d_in = cfg.d + (mode == SegMode::channel ? d_seg : 0);
  for (std::size_t l = 0; l < layers; ++l) {
    MsacConfig layer_cfg = cfg;
    layer_cfg.d = (l == 0) ? d_in : cfg.d_o;
    // The stacked image is [n, 2m], so the bias must cover 2m columns.
    model.stack.push_back(make_msac_params(rng, layer_cfg, n, 2 * m));
  }
  model.score_w = rng.tensor({cfg.d_o}, -0.5, 0.5);
  model.score_b = 0.0;
  return model;
}

std::vector<SimilarityExample> make_similarity_dataset(Rng& rng, std::size_t pairs,
                                                       std::size_t n, std::size_t m,
                                                       std::size_t d, double noise) {
  std::vector<SimilarityExample> out;
  for (std::size_t i = 0; i < pairs; ++i) {
    SimilarityExample e;
    e.same = (i % 2 == 0);
    Tensor base = rng.tensor({n, m, d}, -1.0, 1.0);
    auto noisy = [&](const Tensor& b) {
      Tensor t = b;
      for (std::size_t k = 0; k < t.size(); ++k) t[k] += noise * rng.normal();
      return t;
    };
    if (e.same) {
      e.x = noisy(base);
      e.z = noisy(base);
    } else {
      e.x = noisy(base);
      e.z = noisy(rng.tensor({n, m, d}, -1.0, 1.0));
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_similarity_dataset(const std::string& dir,
                             const std::vector<SimilarityExample>& examples) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["format"] = "msac-similarity-dataset";
  index["pairs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::string xf = "pair" + std::to_string(i) + "_x.mst1";
    std::string zf = "pair" + std::to_string(i) + "_z.mst1";
    write_tensor_mst1(examples[i].x, dir + "/" + xf);
    write_tensor_mst1(examples[i].z, dir + "/" + zf);
    index["pairs"].push_back({{"x", xf}, {"z", zf}, {"same", examples[i].same}});
  }
  std::ofstream out(dir + "/index.json");
  if (!out) throw std::runtime_error("cannot write dataset index in " + dir);
  out << index.dump(2) << "\n";
}

std::vector<SimilarityExample> load_similarity_dataset(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  if (!in) throw std::runtime_error("cannot open dataset index in " + dir);
  nlohmann::json index = nlohmann::json::parse(in);
  std::vector<SimilarityExample> out;
  for (const auto& j : index.at("pairs")) {
    SimilarityExample e;
    e.x = read_tensor_mst1(dir + "/" + j.at("x").get<std::string>());
    e.z = read_tensor_mst1(dir + "/" + j.at("z").get<std::string>());
    e.same = j.at("same").get<bool>();
    out.push_back(std::move(e));
  }
  return out;
}

TrainResult train_gd(const std::vector<ad::NodePtr>& params,
                     const std::function<ad::NodePtr()>& loss_fn, const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_step) {
  require(cfg.lr >= 0.0, "train: learning rate must be non-negative");
  require(cfg.steps >= 1, "train: step count must be positive");
  TrainResult result;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (const ad::NodePtr& p : params) p->grad.reset();
    ad::NodePtr loss = loss_fn();
    double value = loss->value.item();
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
    if (!std::isfinite(value)) {
      result.diverged = true;
      return result;
    }
    ad::backward(loss);
    for (const ad::NodePtr& p : params)
      if (p->grad) axpy_in_place(p->value, -cfg.lr, *p->grad);
  }
  return result;
}

namespace {

void store_back(const std::vector<ad::NodePtr>& leaves, std::vector<Tensor*> slots) {
  require(leaves.size() == slots.size(), "store_back: leaf count mismatch");
  for (std::size_t i = 0; i < leaves.size(); ++i) *slots[i] = leaves[i]->value;
}

std::vector<Tensor*> msac_slots(MSACParams& p) {
  std::vector<Tensor*> slots;
  for (SACParams& s : p.scales) {
    for (AttentionParams& h : s.mh.heads) {
      slots.push_back(&h.hq.tensor);
      slots.push_back(&h.hk.tensor);
      slots.push_back(&h.hv.tensor);
      if (h.bias) slots.push_back(&*h.bias);
    }
    slots.push_back(&s.mh.hy.tensor);
    if (s.hr) {
      slots.push_back(&s.hr->tensor);
      slots.push_back(&s.hy_fuse->tensor);
    }
  }
  slots.push_back(&p.hphi.tensor);
  return slots;
}

}  // namespace

TrainResult train_lm(ToyLMModel& model, const std::vector<std::size_t>& tokens,
                     const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_step) {
  ad::LMModelNodes nodes = ad::lift(model);
  std::vector<ad::NodePtr> leaves = ad::collect_leaves(nodes);
  TrainResult r =
      train_gd(leaves, [&] { return ad::lm_loss(nodes, tokens); }, cfg, on_step);

  std::vector<Tensor*> slots{&model.embedding};
  for (MSACParams& layer : model.stack)
    for (Tensor* t : msac_slots(layer)) slots.push_back(t);
  slots.push_back(&model.out_proj);
  store_back(leaves, std::move(slots));
  return r;
}

TrainResult train_similarity(SimilarityModel& model,
                             const std::vector<SimilarityExample>& dataset,
                             const TrainConfig& cfg,
                             const std::function<void(std::size_t, double)>& on_step) {
  require(!dataset.empty(), "train_similarity: empty dataset");
  ad::SimilarityModelNodes nodes = ad::lift(model);
  std::vector<ad::NodePtr> leaves = ad::collect_leaves(nodes);

  auto loss_fn = [&] {
    ad::NodePtr total;
    for (const SimilarityExample& e : dataset) {
      ad::NodePtr logit = ad::similarity_logit(nodes, ad::leaf(e.x), ad::leaf(e.z));
      ad::NodePtr l = ad::bce_with_logits(logit, e.same ? 1.0 : 0.0);
      total = total ? ad::add(total, l) : l;
    }
    return ad::scale(total, 1.0 / static_cast<double>(dataset.size()));
  };
  TrainResult r = train_gd(leaves, loss_fn, cfg, on_step);

  std::vector<Tensor*> slots{&model.augmentation.x_seg, &model.augmentation.z_seg};
  for (MSACParams& layer : model.stack)
    for (Tensor* t : msac_slots(layer)) slots.push_back(t);
  Tensor score_b_holder;
  slots.push_back(&model.score_w);
  slots.push_back(&score_b_holder);
  store_back(leaves, std::move(slots));
  model.score_b = score_b_holder.item();
  return r;
}

double mean_cross_entropy(const ToyLMModel& model, const std::vector<std::size_t>& tokens) {
  return ad::lm_loss(ad::lift(model), tokens)->value.item();
}

double similarity_accuracy(const SimilarityModel& model,
                           const std::vector<SimilarityExample>& dataset) {
  std::size_t correct = 0;
  for (const SimilarityExample& e : dataset) {
    double p = similarity_score(e.x, e.z, model);
    if ((p > 0.5) == e.same) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void save_lm_model(const ToyLMModel& model, const std::string& dir) {
  std::vector<TensorEntry> entries;
  {
    TensorEntry e;
    e.role = "embedding";
    e.file = "embedding.mst1";
    e.tensor = model.embedding;
    entries.push_back(std::move(e));
  }
  for (std::size_t l = 0; l < model.stack.size(); ++l)
    for (TensorEntry& e : entries_from_msac(model.stack[l], static_cast<int>(l)))
      entries.push_back(std::move(e));
  {
    TensorEntry e;
    e.role = "out_proj";
    e.file = "out_proj.mst1";
    e.tensor = model.out_proj;
    entries.push_back(std::move(e));
  }
  save_tensor_dir(dir, entries);
}

ToyLMModel load_lm_model(const std::string& dir) {
  std::vector<TensorEntry> entries = load_tensor_dir(dir);
  ToyLMModel model;
  int max_layer = -1;
  for (const TensorEntry& e : entries) {
    if (e.role == "embedding") model.embedding = e.tensor;
    if (e.role == "out_proj") model.out_proj = e.tensor;
    max_layer = std::max(max_layer, e.layer);
  }
  require(max_layer >= 0, "lm model: no layers in manifest");
  for (int l = 0; l <= max_layer; ++l) model.stack.push_back(msac_from_entries(entries, l));
  return model;
}

void save_similarity_model(const SimilarityModel& model, const std::string& dir) {
  std::vector<TensorEntry> entries;
  auto push = [&](const std::string& role, const Tensor& t) {
    TensorEntry e;
    e.role = role;
    e.file = role + ".mst1";
    e.tensor = t;
    entries.push_back(std::move(e));
  };
  push(model.augmentation.mode == SegMode::additive ? "x_seg_additive" : "x_seg_channel",
       model.augmentation.x_seg);
  push(model.augmentation.mode == SegMode::additive ? "z_seg_additive" : "z_seg_channel",
       model.augmentation.z_seg);
  for (std::size_t l = 0; l < model.stack.size(); ++l)
    for (TensorEntry& e : entries_from_msac(model.stack[l], static_cast<int>(l)))
      entries.push_back(std::move(e));
  push("score_w", model.score_w);
  push("score_b", Tensor::scalar(model.score_b));
  save_tensor_dir(dir, entries);
}

SimilarityModel load_similarity_model(const std::string& dir) {
  std::vector<TensorEntry> entries = load_tensor_dir(dir);
  SimilarityModel model;
  int max_layer = -1;
  for (const TensorEntry& e : entries) {
    if (e.role == "x_seg_additive" || e.role == "x_seg_channel") {
      model.augmentation.x_seg = e.tensor;
      model.augmentation.mode =
          e.role == "x_seg_additive" ? SegMode::additive : SegMode::channel;
    }
    if (e.role == "z_seg_additive" || e.role == "z_seg_channel")
      model.augmentation.z_seg = e.tensor;
    if (e.role == "score_w") model.score_w = e.tensor;
    if (e.role == "score_b") model.score_b = e.tensor.item();
    max_layer = std::max(max_layer, e.layer);
  }
  require(max_layer >= 0, "similarity model: no layers in manifest");
  for (int l = 0; l <= max_layer; ++l) model.stack.push_back(msac_from_entries(entries, l));
  return model;
}

}  // namespace msac
