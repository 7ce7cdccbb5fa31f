#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "morphdet/bandstats.hpp"
#include "morphdet/embednet.hpp"
#include "morphdet/error.hpp"
#include "morphdet/evalkit.hpp"
#include "morphdet/imaging.hpp"
#include "morphdet/parallel.hpp"
#include "morphdet/random.hpp"
#include "morphdet/wavelet.hpp"

namespace morphdet {

// ---------------------------------------------------------------------------
// Corpus

/// Concatenates manifests into one with absolute paths. With more than one
/// manifest, subject ids (and contributor references) are prefixed with
/// "d<index>/" so datasets cannot collide.
inline Manifest merge_manifests(const std::vector<Manifest>& parts) {
  Manifest out;
  for (std::size_t d = 0; d < parts.size(); ++d) {
    const std::string prefix = parts.size() > 1 ? "d" + std::to_string(d) + "/" : "";
    for (const auto& e : parts[d].entries) {
      ManifestEntry m = e;
      m.path = std::filesystem::absolute(parts[d].resolve(e)).lexically_normal().string();
      m.subject_id = prefix + e.subject_id;
      for (auto& c : m.contributors) c = prefix + c;
      out.entries.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

enum class Split { train, val, test, excluded };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::excluded: return "excluded";
  }
  return "?";
}

/// Subject-disjoint partition. Validation subjects are carved out of the
/// test half; `test_subjects` holds the remainder used for evaluation.
struct SplitPlan {
  std::set<std::string> train_subjects, val_subjects, test_subjects;
  double fraction = 0.5;
  double val_fraction = 0.15;
  std::uint64_t seed = 0;
  /// Morph ids dropped because their contributors landed in different
  /// groups.
  std::vector<std::string> excluded_morphs;

  Split subject_split(const std::string& id) const {
    if (train_subjects.count(id)) return Split::train;
    if (val_subjects.count(id)) return Split::val;
    if (test_subjects.count(id)) return Split::test;
    return Split::excluded;
  }

  /// Bona fide entries follow their subject. A morph is a training morph
  /// when both contributors train, an evaluation morph when neither does
  /// (test if any contributor is a test subject, else val), and excluded
  /// otherwise.
  Split split_of(const ManifestEntry& e) const {
    if (e.label == Label::bona_fide) return subject_split(e.subject_id);
    const Split a = subject_split(e.contributors.at(0));
    const Split b = subject_split(e.contributors.at(1));
    if (a == Split::excluded || b == Split::excluded) return Split::excluded;
    if (a == Split::train || b == Split::train) return a == b ? a : Split::excluded;
    return a == Split::test || b == Split::test ? Split::test : Split::val;
  }
};

/// Orders subjects by a seeded hash, puts round(fraction * n) in train and
/// earmarks round(val_fraction * n_test) of the rest for validation.
/// Subjects carrying a split_hint are placed on the hinted side first; the
/// train count grows or shrinks only when the hints demand it.
inline SplitPlan make_split(const std::vector<ManifestEntry>& entries, double fraction, std::uint64_t seed,
                            double val_fraction = 0.15) {
  require(fraction > 0.0 && fraction < 1.0, "split: fraction must lie in (0,1)");
  require(val_fraction >= 0.0 && val_fraction < 1.0, "split: val_fraction must lie in [0,1)");
  std::vector<std::string> subjects;
  for (const auto& e : entries)
    if (e.label == Label::bona_fide) subjects.push_back(e.subject_id);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  require(subjects.size() >= 2, "split: too few subjects (need at least 2)");

  std::map<std::string, SplitHint> hints;
  for (const auto& e : entries) {
    if (e.label != Label::bona_fide || !e.split_hint) continue;
    auto [it, fresh] = hints.emplace(e.subject_id, *e.split_hint);
    require(fresh || it->second == *e.split_hint, "split: conflicting split_hint for subject " + e.subject_id);
  }

  // Hinted-train subjects sort first and hinted-test subjects last; the
  // rest keep their hash order in between.
  std::vector<std::tuple<int, std::uint64_t, std::string>> keyed;
  for (const auto& s : subjects) {
    auto it = hints.find(s);
    const int group = it == hints.end() ? 1 : (it->second == SplitHint::train ? 0 : 2);
    keyed.emplace_back(group, seeded_hash(s, seed), s);
  }
  std::sort(keyed.begin(), keyed.end());

  const std::size_t n = keyed.size();
  auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * n)), 1, n - 1);
  std::size_t hinted_train = 0, hinted_test = 0;
  for (const auto& [s, h] : hints) (h == SplitHint::train ? hinted_train : hinted_test) += 1;
  require(hinted_train < n && hinted_test < n, "split: split_hint leaves one side empty");
  n_train = std::clamp(n_train, std::max<std::size_t>(hinted_train, 1), n - std::max<std::size_t>(hinted_test, 1));
  const std::size_t n_test_side = n - n_train;
  std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * n_test_side));
  if (val_fraction > 0.0 && n_val == 0 && n_test_side >= 2) n_val = 1;
  if (n_val >= n_test_side) n_val = n_test_side - 1;

  SplitPlan plan;
  plan.fraction = fraction;
  plan.val_fraction = val_fraction;
  plan.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = std::get<2>(keyed[i]);
    if (i < n_train) {
      plan.train_subjects.insert(s);
    } else if (i >= n - n_val) {
      plan.val_subjects.insert(s);
    } else {
      plan.test_subjects.insert(s);
    }
  }
  for (const auto& e : entries)
    if (e.label == Label::morph && plan.split_of(e) == Split::excluded) plan.excluded_morphs.push_back(e.subject_id);
  return plan;
}

// ---------------------------------------------------------------------------
// Pairs

/// Indices into the manifest entries. label 0 = genuine, 1 = imposter.
struct PairRef {
  std::size_t reference = 0;
  std::size_t probe = 0;
  int label = 0;
  friend bool operator==(const PairRef&, const PairRef&) = default;
};

struct PairLists {
  std::vector<PairRef> train, val, test;
  std::vector<std::string> warnings;

  std::vector<PairRef>& of(Split s) {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      default: return test;
    }
  }
};

/// Genuine pairs: every within-subject combination of bona fide images.
/// Imposter pairs: each non-excluded morph against every bona fide image of
/// each contributor (contributor image as reference, morph as probe).
inline PairLists build_pair_refs(const std::vector<ManifestEntry>& entries, const SplitPlan& plan) {
  PairLists out;
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].label == Label::bona_fide) by_subject[entries[i].subject_id].push_back(i);

  for (const auto& [subject, imgs] : by_subject) {
    const Split s = plan.subject_split(subject);
    if (s == Split::excluded) continue;
    if (imgs.size() < 2) {
      out.warnings.push_back("subject " + subject + " has fewer than 2 bona fide images; no genuine pairs");
      continue;
    }
    for (std::size_t a = 0; a < imgs.size(); ++a)
      for (std::size_t b = a + 1; b < imgs.size(); ++b) out.of(s).push_back({imgs[a], imgs[b], 0});
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.label != Label::morph) continue;
    const Split s = plan.split_of(e);
    if (s == Split::excluded) continue;
    for (const auto& c : e.contributors) {
      auto it = by_subject.find(c);
      if (it == by_subject.end()) {
        out.warnings.push_back("morph " + e.subject_id + ": contributor " + c + " has no bona fide images");
        continue;
      }
      // Evaluation pairs go where their reference subject is.
      const Split ps = s == Split::train ? s : plan.subject_split(c);
      for (std::size_t ref : it->second) out.of(ps).push_back({ref, i, 1});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features

enum class InputMode { gray, rgb };

inline std::string_view to_string(InputMode m) { return m == InputMode::rgb ? "rgb" : "gray"; }

inline InputMode parse_mode(std::string_view s) {
  if (s == "gray") return InputMode::gray;
  if (s == "rgb") return InputMode::rgb;
  throw Error("unknown mode '" + std::string(s) + "' (want gray|rgb)");
}

struct FeatureSpec {
  WaveletFamily family = WaveletFamily::haar;
  InputMode mode = InputMode::gray;
  std::size_t image_size = 160;
  SelectionMask mask;

  std::size_t channel_count() const { return mask.size() * (mode == InputMode::rgb ? 3 : 1); }
};

/// Preprocessed image: grayscale (gray mode) or RGB, resized to a square of
/// `size` pixels, optionally mirrored. Flipping happens here, before any
/// decomposition.
inline MultiChannelImage preprocess(const MultiChannelImage& img, InputMode mode, std::size_t size, bool flip) {
  MultiChannelImage out = mode == InputMode::gray ? MultiChannelImage({to_grayscale(img)}) : img;
  require(out.channel_count() == (mode == InputMode::rgb ? 3u : 1u), "rgb mode needs 3-channel images");
  out = resize_bilinear(out, size, size);
  return flip ? hflip(out) : out;
}

/// Masked sub-band stack (channel-major: every selected band of R, then G,
/// then B in rgb mode) as a network input tensor.
inline Tensor band_tensor(const MultiChannelImage& preprocessed, const FeatureSpec& spec) {
  const FilterBank fb = make_filter_bank(spec.family);
  const std::size_t h = preprocessed.height(), w = preprocessed.width();
  Tensor t({spec.channel_count(), h, w});
  std::size_t k = 0;
  for (const auto& ch : preprocessed.channels()) {
    const auto leaves = decompose_leaves(ch, fb, spec.mask.bands);
    for (const auto& id : spec.mask.bands) {
      const Grid& g = leaves.at(id);
      std::copy(g.raw().begin(), g.raw().end(), t.data.begin() + static_cast<long>(k * h * w));
      ++k;
    }
  }
  return t;
}

/// Lazily computed, cached feature tensors keyed by (entry, flip). Values
/// are stored in single precision; every read converts them back to the
/// same doubles, so results do not depend on when an item was cached.
class FeatureStore {
 public:
  FeatureStore(Manifest manifest, FeatureSpec spec) : manifest_(std::move(manifest)), spec_(std::move(spec)) {
    require(!spec_.mask.bands.empty(), "features: selection mask is empty");
  }

  const Manifest& manifest() const { return manifest_; }
  const std::vector<ManifestEntry>& entries() const { return manifest_.entries; }
  const FeatureSpec& spec() const { return spec_; }
  std::size_t channel_count() const { return spec_.channel_count(); }

  /// Computes every missing key in parallel.
  void prefetch(const std::vector<std::pair<std::size_t, bool>>& keys) {
    std::vector<std::pair<std::size_t, bool>> missing;
    {
      std::lock_guard lock(mutex_);
      std::set<std::pair<std::size_t, bool>> seen;
      for (const auto& k : keys)
        if (!cache_.count(k) && seen.insert(k).second) missing.push_back(k);
    }
    std::vector<std::vector<float>> computed(missing.size());
    parallel_for(missing.size(), [&](std::size_t i) { computed[i] = compute(missing[i].first, missing[i].second); });
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(computed[i]));
  }

  Tensor features(std::size_t entry, bool flip) {
    const std::pair<std::size_t, bool> key{entry, flip};
    {
      std::lock_guard lock(mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return to_tensor(it->second);
    }
    auto values = compute(entry, flip);
    Tensor t = to_tensor(values);
    std::lock_guard lock(mutex_);
    cache_.emplace(key, std::move(values));
    return t;
  }

 private:
  std::vector<float> compute(std::size_t entry, bool flip) const {
    const auto img = load_image(manifest_.resolve(manifest_.entries.at(entry)));
    const Tensor t = band_tensor(preprocess(img, spec_.mode, spec_.image_size, flip), spec_);
    return std::vector<float>(t.data.begin(), t.data.end());
  }
  Tensor to_tensor(const std::vector<float>& v) const {
    return Tensor({channel_count(), spec_.image_size, spec_.image_size}, std::vector<double>(v.begin(), v.end()));
  }

  Manifest manifest_;
  FeatureSpec spec_;
  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, std::vector<float>> cache_;
};

/// Reference/probe stacks of one pair plus its label and audit ids.
struct PairSample {
  Tensor reference;
  Tensor probe;
  int label = 0;
  std::string reference_id;
  std::string probe_id;
};

/// Same flip applied to both members of the pair.
inline PairSample materialize_pair(FeatureStore& store, const PairRef& p, bool flip = false) {
  return {store.features(p.reference, flip), store.features(p.probe, flip), p.label,
          store.entries()[p.reference].subject_id, store.entries()[p.probe].subject_id};
}

// ---------------------------------------------------------------------------
// Balanced batches

struct BatchSlot {
  std::size_t pair = 0;
  bool flip = false;
  friend bool operator==(const BatchSlot&, const BatchSlot&) = default;
};
using Batch = std::vector<BatchSlot>;

/// Streams of class-balanced batches: each batch holds batch_size/2 genuine
/// and batch_size/2 imposter pairs. Each class is drawn from successive
/// reshuffled permutations of its pairs, so the minority class is
/// oversampled. An epoch covers the majority class once (rounded up to
/// whole batches).
class BalancedBatcher {
 public:
  BalancedBatcher(const std::vector<PairRef>& pairs, std::size_t batch_size, std::uint64_t seed, bool augment)
      : half_(batch_size / 2), augment_(augment), rng_(seed) {
    require(batch_size >= 2 && batch_size % 2 == 0, "batches: batch size must be even and >= 2");
    for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].label == 0 ? genuine_ : imposter_).pool.push_back(i);
    require(!genuine_.pool.empty() && !imposter_.pool.empty(), "batches: a class is empty");
  }

  std::size_t batches_per_epoch() const {
    const std::size_t majority = std::max(genuine_.pool.size(), imposter_.pool.size());
    return (majority + half_ - 1) / half_;
  }

  std::vector<Batch> next_epoch() {
    std::vector<Batch> out(batches_per_epoch());
    for (auto& batch : out) {
      batch.reserve(2 * half_);
      for (std::size_t i = 0; i < half_; ++i) batch.push_back({draw(genuine_), false});
      for (std::size_t i = 0; i < half_; ++i) batch.push_back({draw(imposter_), false});
      if (augment_)
        for (auto& slot : batch) slot.flip = (rng_.next_u64() >> 63) != 0;
    }
    return out;
  }

 private:
  struct Stream {
    std::vector<std::size_t> pool, order;
    std::size_t pos = 0;
  };
  std::size_t draw(Stream& s) {
    if (s.pos == s.order.size()) {
      s.order = s.pool;
      rng_.shuffle(s.order);
      s.pos = 0;
    }
    return s.order[s.pos++];
  }

  std::size_t half_;
  bool augment_;
  Rng rng_;
  Stream genuine_, imposter_;
};

/// One epoch of balanced batches.
inline std::vector<Batch> balanced_batches(const std::vector<PairRef>& pairs, std::size_t batch_size,
                                           std::uint64_t seed, bool augment) {
  return BalancedBatcher(pairs, batch_size, seed, augment).next_epoch();
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr0 = 1e-4;
  double lr_min = 1e-7;
  std::size_t plateau_patience = 10;
  std::size_t stop_patience = 35;
  std::size_t max_epochs = 150;
  std::uint64_t seed = 0;
  bool augment = true;
  ContrastiveParams contrastive;

  void validate() const {
    require(lr_min > 0.0 && lr_min < lr0, "train config: need 0 < lr_min < lr0");
    require(plateau_patience >= 1 && stop_patience >= 1, "train config: patience values must be >= 1");
    require(max_epochs >= 1, "train config: max_epochs must be >= 1");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val_loss = 0.0;
  bool is_best = false;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// Validation-driven learning-rate control: new lows are remembered; after
/// `plateau_patience` epochs without one the best weights are reloaded and
/// the rate divided by 10; training ends when that would take the rate
/// below lr_min, after `stop_patience` epochs without a new low, or at
/// max_epochs.
class PlateauSchedule {
 public:
  struct Decision {
    bool is_best = false;
    bool reload_best = false;
    bool stop = false;
    std::string reason;
  };

  explicit PlateauSchedule(const TrainConfig& cfg) : cfg_(cfg), lr_(cfg.lr0) { cfg_.validate(); }

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t epochs_seen() const { return epochs_; }

  Decision observe(double val_loss) {
    Decision d;
    ++epochs_;
    if (val_loss < best_) {
      best_ = val_loss;
      since_best_ = 0;
      since_drop_ = 0;
      d.is_best = true;
    } else {
      ++since_best_;
      ++since_drop_;
    }
    if (since_best_ >= cfg_.stop_patience) {
      d.stop = true;
      d.reason = "early stop: no improvement for " + std::to_string(cfg_.stop_patience) + " epochs";
    } else if (since_drop_ >= cfg_.plateau_patience) {
      const double next = lr_ / 10.0;
      if (next < cfg_.lr_min * (1.0 - 1e-9)) {
        d.stop = true;
        d.reason = "learning rate would fall below minimum";
      } else {
        lr_ = next;
        since_drop_ = 0;
        d.reload_best = true;
      }
    }
    if (!d.stop && epochs_ >= cfg_.max_epochs) {
      d.stop = true;
      d.reason = "max epochs reached";
    }
    return d;
  }

 private:
  TrainConfig cfg_;
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_best_ = 0;
  std::size_t since_drop_ = 0;
  std::size_t epochs_ = 0;
};

struct TrainResult {
  EmbedNet best_net;
  AdamState adam;
  std::vector<EpochLog> log;
  std::string stop_reason;
};

/// Runs one epoch at the given rate, returning the mean training loss.
using EpochRunner = std::function<double(EmbedNet&, AdamState&, double lr, std::size_t epoch)>;
/// Mean validation loss of a network.
using Validator = std::function<double(const EmbedNet&)>;

inline TrainResult train_loop(const TrainConfig& cfg, EmbedNet net, const EpochRunner& run_epoch,
                              const Validator& validate, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  PlateauSchedule schedule(cfg);
  TrainResult result;
  result.adam = AdamState::for_net(net);
  result.best_net = net;
  for (std::size_t epoch = 1;; ++epoch) {
    const double lr = schedule.lr();
    const double train_loss = run_epoch(net, result.adam, lr, epoch);
    const double val_loss = validate(net);
    const auto d = schedule.observe(val_loss);
    if (d.is_best) result.best_net = net;
    result.log.push_back({epoch, lr, train_loss, val_loss, schedule.best(), d.is_best});
    if (on_epoch) on_epoch(result.log.back());
    if (d.stop) {
      result.stop_reason = d.reason;
      break;
    }
    if (d.reload_best) net = result.best_net;
  }
  return result;
}

/// Distances of `pairs` under `net`, in pair order (no flips).
inline std::vector<double> pair_distances(const EmbedNet& net, FeatureStore& store, const std::vector<PairRef>& pairs) {
  require(net.config().in_channels == store.channel_count(),
          "channel mismatch: network expects " + std::to_string(net.config().in_channels) + " channels, data has " +
              std::to_string(store.channel_count()));
  std::vector<std::pair<std::size_t, bool>> keys;
  for (const auto& p : pairs) {
    keys.emplace_back(p.reference, false);
    keys.emplace_back(p.probe, false);
  }
  store.prefetch(keys);
  std::vector<double> d(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto e1 = forward(net, store.features(pairs[i].reference, false));
    const auto e2 = forward(net, store.features(pairs[i].probe, false));
    d[i] = pair_distance(e1, e2);
  });
  return d;
}

inline double mean_pair_loss(const EmbedNet& net, FeatureStore& store, const std::vector<PairRef>& pairs,
                             const ContrastiveParams& p) {
  require(!pairs.empty(), "validation: empty pair set");
  const auto d = pair_distances(net, store, pairs);
  double s = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) s += contrastive_loss(d[i], pairs[i].label, p);
  return s / static_cast<double>(pairs.size());
}

/// Full training: balanced, optionally augmented batches over `train_pairs`,
/// Adam, and validation on `val_pairs` each epoch.
inline TrainResult train(const TrainConfig& cfg, EmbedNet net, FeatureStore& store,
                         const std::vector<PairRef>& train_pairs, const std::vector<PairRef>& val_pairs,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  require(!train_pairs.empty() && !val_pairs.empty(), "train: empty splits");
  require(net.config().in_channels == store.channel_count(), "channel mismatch: network vs features");
  BalancedBatcher batcher(train_pairs, cfg.batch_size, cfg.seed, cfg.augment);

  EpochRunner run_epoch = [&](EmbedNet& n, AdamState& adam, double lr, std::size_t) {
    double total = 0.0;
    const auto batches = batcher.next_epoch();
    for (const auto& batch : batches) {
      std::vector<std::pair<std::size_t, bool>> keys;
      for (const auto& slot : batch) {
        keys.emplace_back(train_pairs[slot.pair].reference, slot.flip);
        keys.emplace_back(train_pairs[slot.pair].probe, slot.flip);
      }
      store.prefetch(keys);
      std::vector<Tensor> refs(batch.size()), probes(batch.size());
      std::vector<PairInput> inputs(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& pr = train_pairs[batch[i].pair];
        refs[i] = store.features(pr.reference, batch[i].flip);
        probes[i] = store.features(pr.probe, batch[i].flip);
        inputs[i] = {&refs[i], &probes[i], pr.label};
      }
      const auto g = batch_loss_and_gradient(n, inputs, cfg.contrastive);
      adam_step(n, g.grads, adam, lr);
      const double loss = g.mean_loss;
      total += loss;
    }
    return total / static_cast<double>(batches.size());
  };
  Validator validate = [&](const EmbedNet& n) { return mean_pair_loss(n, store, val_pairs, cfg.contrastive); };

  return train_loop(cfg, std::move(net), run_epoch, validate, on_epoch);
}

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,train_loss,val_loss,is_best\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.17g,%.17g,%d\n", e.epoch, e.lr, e.train_loss, e.val_loss,
                  e.is_best ? 1 : 0);
    out += buf;
  }
  return out;
}

/// Genuine/imposter buckets from per-pair distances.
inline ScoreSet score_set(const std::vector<PairRef>& pairs, const std::vector<double>& distances) {
  require(pairs.size() == distances.size(), "scores: length mismatch");
  ScoreSet s;
  for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].label == 0 ? s.genuine : s.imposter).push_back(distances[i]);
  return s;
}

}  // namespace morphdet
