// morphdet: command-line front end.
//
//   morphdet synth        write a synthetic face-like corpus
//   morphdet decompose    dump the 48 (or 144) sub-bands of one image
//   morphdet rank-bands   entropy/KLD band ranking and top-k mask
//   morphdet train        train the pair network
//   morphdet evaluate     score pairs, write metrics and DET artifacts
//   morphdet reconstruct  inverse transform / LL-removed image
//
// Exit codes: 0 success, 1 runtime error, 2 bad flags.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "morphdet/bandstats.hpp"
#include "morphdet/checkpoint.hpp"
#include "morphdet/evalkit.hpp"
#include "morphdet/imaging.hpp"
#include "morphdet/parallel.hpp"
#include "morphdet/pipeline.hpp"
#include "morphdet/synth.hpp"
#include "morphdet/wavelet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace morphdet;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("unwritable output: " + path.string());
  out << text;
  if (!out) throw Error("unwritable output: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("unreadable file: " + path.string());
  try {
    return json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed json: " + path.string() + ": " + e.what());
  }
}

json string_list(const std::vector<std::string>& v) {
  json a = json::array();
  for (const auto& s : v) a.push_back(s);
  return a;
}

Manifest load_manifests(const std::vector<std::string>& paths) {
  std::vector<Manifest> parts;
  for (const auto& p : paths) parts.push_back(parse_manifest(p));
  return merge_manifests(parts);
}

/// Path of each merged entry as written in its manifest, prefixed like the
/// subject ids when several manifests are merged.
std::vector<std::string> display_paths(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < paths.size(); ++d) {
    const std::string prefix = paths.size() > 1 ? "d" + std::to_string(d) + "/" : "";
    for (const auto& e : parse_manifest(paths[d]).entries) out.push_back(prefix + e.path);
  }
  return out;
}

struct MaskFile {
  SelectionMask mask;
  json run_config = json::object();
};

MaskFile read_mask(const fs::path& path) {
  const json j = read_json(path);
  MaskFile m;
  try {
    m.mask = mask_from_json(j.at("bands"));
    m.run_config = j.value("run_config", json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed mask file: " + path.string() + ": " + e.what());
  }
  require(!m.mask.bands.empty(), "mask file has no bands: " + path.string());
  return m;
}

std::string fmt(double v) { return format_double(v); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthOptions opt;
};

int run_synth(const SynthArgs& a) {
  const auto manifest = synth_dataset(a.opt, a.out);
  write_json(fs::path(a.out) / "run_config.json", {{"command", "synth"},
                                                    {"seed", a.opt.seed},
                                                    {"subjects", a.opt.n_subjects},
                                                    {"per_subject", a.opt.imgs_per_subject},
                                                    {"morphs", a.opt.n_morphs},
                                                    {"size", a.opt.size},
                                                    {"noise", a.opt.noise_sigma},
                                                    {"smooth_morphs", a.opt.smooth_morphs},
                                                    {"out", a.out}});
  std::cout << "wrote " << manifest.string() << "\n";
  return 0;
}

struct DecomposeArgs {
  std::string in, out, family = "haar", mode = "gray";
  std::size_t size = 0;
};

int run_decompose(const DecomposeArgs& a) {
  const auto family = parse_family(a.family);
  const auto mode = parse_mode(a.mode);
  auto img = load_image(a.in);
  const std::size_t size = a.size ? a.size : 0;
  MultiChannelImage pre = mode == InputMode::gray ? MultiChannelImage({to_grayscale(img)}) : img;
  require(pre.channel_count() == (mode == InputMode::rgb ? 3u : 1u), "rgb mode needs a 3-channel image");
  if (size) pre = resize_bilinear(pre, size, size);
  const auto stack = decompose_48(pre, make_filter_bank(family));
  dump_bands(stack, a.out,
             {{"command", "decompose"}, {"in", a.in}, {"family", a.family}, {"mode", a.mode}, {"size", a.size}});
  std::cout << stack.band_count() << " bands written to " << a.out << "\n";
  return 0;
}

struct RankArgs {
  std::vector<std::string> manifests;
  std::string out = ".", family = "haar", kld_direction = "bona_fide_to_morph", subset = "all";
  std::size_t entropy_bins = 256, k = 22, size = 160;
  double fraction = 0.5, val_fraction = 0.15;
  std::uint64_t seed = 0;
};

int run_rank_bands(const RankArgs& a) {
  const auto family = parse_family(a.family);
  const auto dir = parse_kld_direction(a.kld_direction);
  require(a.subset == "all" || a.subset == "train", "subset must be all|train");
  const auto fb = make_filter_bank(family);

  std::vector<std::size_t> dataset_of;
  for (std::size_t d = 0; d < a.manifests.size(); ++d)
    dataset_of.insert(dataset_of.end(), parse_manifest(a.manifests[d]).entries.size(), d);
  const Manifest merged = load_manifests(a.manifests);

  std::vector<bool> use(merged.entries.size(), true);
  if (a.subset == "train") {
    const auto plan = make_split(merged.entries, a.fraction, a.seed, a.val_fraction);
    for (std::size_t i = 0; i < use.size(); ++i) use[i] = plan.split_of(merged.entries[i]) == Split::train;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < use.size(); ++i)
    if (use[i]) idx.push_back(i);

  std::vector<std::vector<double>> entropies(idx.size());
  parallel_for(idx.size(), [&](std::size_t j) {
    const auto img = load_image(merged.resolve(merged.entries[idx[j]]));
    const auto pre = preprocess(img, InputMode::gray, a.size, false);
    entropies[j] = band_entropies(pre.channel(0), fb, a.entropy_bins);
  });

  std::vector<DatasetStatistics> stats;
  std::vector<std::string> names;
  for (std::size_t d = 0; d < a.manifests.size(); ++d) {
    std::vector<std::vector<double>> e;
    std::vector<bool> is_morph;
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (dataset_of[idx[j]] == d) {
        e.push_back(entropies[j]);
        is_morph.push_back(merged.entries[idx[j]].label == Label::morph);
      }
    names.push_back(a.manifests.size() > 1 ? "d" + std::to_string(d) : "d0");
    stats.push_back(fit_dataset(names.back(), e, is_morph, dir));
  }
  const auto combined = combine_datasets(stats);
  const auto& ids = leaf_ids_48();
  const auto order = rank_order(combined.normalized_avg, ids);
  const auto mask = select_top_k(combined.normalized_avg, a.k);

  std::string csv = "band_id";
  for (const auto& n : names) csv += ",kld_" + n;
  csv += ",normalized_avg,rank\n";
  std::vector<SubbandId> ranking;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t b = order[r];
    ranking.push_back(ids[b]);
    csv += ids[b].str();
    for (const auto& ds : combined.datasets) csv += "," + fmt(ds.bands[b].kld);
    csv += "," + fmt(combined.normalized_avg[b]) + "," + std::to_string(r + 1) + "\n";
  }

  const json run_config = {{"command", "rank-bands"},
                           {"manifests", string_list(a.manifests)},
                           {"family", a.family},
                           {"entropy_bins", a.entropy_bins},
                           {"kld_direction", std::string(to_string(dir))},
                           {"k", a.k},
                           {"mode", "gray"},
                           {"size", a.size},
                           {"subset", a.subset},
                           {"fraction", a.fraction},
                           {"val_fraction", a.val_fraction},
                           {"seed", a.seed},
                           {"images_used", idx.size()}};
  const auto summary = high_frequency_rank_summary(ranking);
  write_text(fs::path(a.out) / "band_ranking.csv", csv);
  write_json(fs::path(a.out) / "selection_mask.json",
             {{"bands", mask_to_json(mask)},
              {"high_frequency_rank",
               {{"mean_rank_two_or_more_high_pass", summary.mean_rank_high},
                {"mean_rank_at_most_one_high_pass", summary.mean_rank_low}}},
              {"run_config", run_config}});
  std::cout << "ranked 48 bands over " << idx.size() << " images; top " << a.k << ":";
  for (const auto& id : mask.bands) std::cout << ' ' << id.str();
  std::cout << "\n";
  return 0;
}

struct TrainArgs {
  std::vector<std::string> manifests;
  std::string mask, out = "model.ckpt", log, family, mode = "gray", arch = "16:3:1,32:3:1,64:3:1";
  std::size_t size = 160, embedding_dim = 128;
  double fraction = 0.5, val_fraction = 0.15, margin = 1.0;
  bool l2_normalize = false, no_augment = false, quiet = false;
  TrainConfig cfg;
};

int run_train(const TrainArgs& a) {
  const MaskFile mf = read_mask(a.mask);
  const std::string family_name = !a.family.empty() ? a.family : mf.run_config.value("family", std::string("haar"));
  FeatureSpec spec{parse_family(family_name), parse_mode(a.mode), a.size, mf.mask};
  const Manifest merged = load_manifests(a.manifests);
  const auto plan = make_split(merged.entries, a.fraction, a.cfg.seed, a.val_fraction);
  const auto pairs = build_pair_refs(merged.entries, plan);
  for (const auto& w : pairs.warnings) std::cerr << "warning: " << w << "\n";

  EmbedNetConfig ncfg;
  ncfg.in_channels = spec.channel_count();
  ncfg.blocks = parse_blocks(a.arch);
  ncfg.embedding_dim = a.embedding_dim;
  ncfg.seed = a.cfg.seed;
  ncfg.l2_normalize = a.l2_normalize;
  TrainConfig cfg = a.cfg;
  cfg.augment = !a.no_augment;
  cfg.contrastive.margin = a.margin;

  std::cerr << "pairs: train " << pairs.train.size() << ", val " << pairs.val.size() << ", test "
            << pairs.test.size() << "; excluded morphs " << plan.excluded_morphs.size() << "\n";
  FeatureStore store(merged, spec);
  const auto result = train(cfg, EmbedNet(ncfg), store, pairs.train, pairs.val, [&](const EpochLog& e) {
    if (a.quiet) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3zu  lr %.1e  train %.6f  val %.6f%s\n", e.epoch, e.lr, e.train_loss,
                  e.val_loss, e.is_best ? "  *" : "");
    std::cerr << buf;
  });

  CheckpointMeta meta;
  meta.mask = mf.mask;
  meta.family = spec.family;
  meta.mode = std::string(to_string(spec.mode));
  meta.image_size = spec.image_size;
  meta.run_config = {{"command", "train"},
                     {"manifests", string_list(a.manifests)},
                     {"mask", a.mask},
                     {"mask_run_config", mf.run_config},
                     {"family", family_name},
                     {"mode", meta.mode},
                     {"size", a.size},
                     {"k", mf.mask.size()},
                     {"seed", cfg.seed},
                     {"fraction", a.fraction},
                     {"val_fraction", a.val_fraction},
                     {"arch", format_blocks(ncfg.blocks)},
                     {"embedding_dim", a.embedding_dim},
                     {"l2_normalize", a.l2_normalize},
                     {"batch", cfg.batch_size},
                     {"lr", cfg.lr0},
                     {"lr_min", cfg.lr_min},
                     {"plateau", cfg.plateau_patience},
                     {"stop", cfg.stop_patience},
                     {"max_epochs", cfg.max_epochs},
                     {"margin", a.margin},
                     {"augment", cfg.augment},
                     {"stop_reason", result.stop_reason},
                     {"split",
                      {{"train_subjects", plan.train_subjects.size()},
                       {"val_subjects", plan.val_subjects.size()},
                       {"test_subjects", plan.test_subjects.size()},
                       {"excluded_morphs", string_list(plan.excluded_morphs)},
                       {"train_pairs", pairs.train.size()},
                       {"val_pairs", pairs.val.size()},
                       {"test_pairs", pairs.test.size()}}}};
  if (fs::path(a.out).has_parent_path()) {
    std::error_code ec;
    fs::create_directories(fs::path(a.out).parent_path(), ec);
  }
  save_checkpoint(result.best_net, result.adam, meta, a.out);
  const fs::path log = a.log.empty() ? fs::path(a.out).parent_path() / "training_log.csv" : fs::path(a.log);
  write_text(log, training_log_csv(result.log));
  write_json(fs::path(log).replace_extension(".json"), meta.run_config);
  std::cerr << "stopped: " << result.stop_reason << "\n";
  std::cout << "wrote " << a.out << " and " << log.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, mask, mode, out_dir = ".", split = "test";
  std::vector<std::string> manifests;
  double fraction = -1, val_fraction = -1;
  long long seed = -1;
};

int run_evaluate(const EvalArgs& a) {
  const auto ck = load_checkpoint(a.ckpt);
  SelectionMask mask = ck.meta.mask;
  if (!a.mask.empty()) {
    const auto mf = read_mask(a.mask);
    require(mf.mask == ck.meta.mask, "mask mismatch: " + a.mask + " differs from the mask stored in the checkpoint");
  }
  const std::string mode = a.mode.empty() ? ck.meta.mode : a.mode;
  FeatureSpec spec{ck.meta.family, parse_mode(mode), ck.meta.image_size, mask};
  const Manifest merged = load_manifests(a.manifests);
  const auto names = display_paths(a.manifests);

  const json& rc = ck.meta.run_config;
  const double fraction = a.fraction >= 0 ? a.fraction : rc.value("fraction", 0.5);
  const double val_fraction = a.val_fraction >= 0 ? a.val_fraction : rc.value("val_fraction", 0.15);
  const std::uint64_t seed = a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : rc.value("seed", std::uint64_t{0});

  std::vector<PairRef> pairs;
  if (a.split == "all") {
    SplitPlan plan;
    for (const auto& e : merged.entries)
      if (e.label == Label::bona_fide) plan.test_subjects.insert(e.subject_id);
    pairs = build_pair_refs(merged.entries, plan).test;
  } else {
    require(a.split == "test" || a.split == "val", "split must be test|val|all");
    const auto plan = make_split(merged.entries, fraction, seed, val_fraction);
    auto lists = build_pair_refs(merged.entries, plan);
    pairs = a.split == "test" ? lists.test : lists.val;
  }
  require(!pairs.empty(), "evaluate: no pairs in split '" + a.split + "'");

  FeatureStore store(merged, spec);
  const auto d = pair_distances(ck.net, store, pairs);
  const auto scores = score_set(pairs, d);

  std::string csv = "reference,probe,distance,label\n";
  for (std::size_t i = 0; i < pairs.size(); ++i)
    csv += names[pairs[i].reference] + "," + names[pairs[i].probe] + "," + fmt(d[i]) + "," +
           (pairs[i].label == 0 ? "genuine" : "imposter") + "\n";

  const fs::path out(a.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  write_text(out / "scores.csv", csv);
  det_curve(scores, out / "det.csv", out / "det.svg");

  const auto eer = d_eer(scores);
  auto at = [&](FixedRate f, double level) {
    const auto r = rate_at(scores, f, level);
    return json{{"rate", r.rate}, {"threshold", r.point.threshold}, {"reachable", r.reachable}};
  };
  const json metrics = {{"d_eer", eer.eer},
                        {"d_eer_threshold", eer.threshold},
                        {"d_eer_apcer", eer.point.apcer},
                        {"d_eer_bpcer", eer.point.bpcer},
                        {"apcer_at_bpcer_5", at(FixedRate::bpcer, 0.05)},
                        {"apcer_at_bpcer_10", at(FixedRate::bpcer, 0.10)},
                        {"bpcer_at_apcer_5", at(FixedRate::apcer, 0.05)},
                        {"bpcer_at_apcer_10", at(FixedRate::apcer, 0.10)},
                        {"genuine_pairs", scores.genuine.size()},
                        {"imposter_pairs", scores.imposter.size()},
                        {"run_config",
                         {{"command", "evaluate"},
                          {"ckpt", a.ckpt},
                          {"manifests", string_list(a.manifests)},
                          {"split", a.split},
                          {"mode", mode},
                          {"family", std::string(to_string(ck.meta.family))},
                          {"k", mask.size()},
                          {"fraction", fraction},
                          {"val_fraction", val_fraction},
                          {"seed", seed},
                          {"train_run_config", rc}}}};
  write_json(out / "metrics.json", metrics);
  char buf[200];
  std::snprintf(buf, sizeof buf, "D-EER %.4f  (genuine %zu, imposter %zu)\n", eer.eer, scores.genuine.size(),
                scores.imposter.size());
  std::cout << buf;
  return 0;
}

struct ReconstructArgs {
  std::string in, out, family = "haar", mode = "gray";
  bool drop_ll = false;
  double offset = 0.0;
  int levels = 3;
};

int run_reconstruct(const ReconstructArgs& a) {
  const auto fb = make_filter_bank(parse_family(a.family));
  const auto mode = parse_mode(a.mode);
  const auto img = load_image(a.in);
  std::vector<Grid> channels;
  if (mode == InputMode::gray) {
    channels.push_back(to_grayscale(img));
  } else {
    require(img.channel_count() == 3, "rgb mode needs a 3-channel image");
    channels = img.channels();
  }
  double lo = 0, hi = 0, err = 0;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    Grid r = a.drop_ll ? ll_removed_image(channels[c], fb) : swt_inverse(swt_pyramid(channels[c], fb, a.levels), fb);
    if (!a.drop_ll) err = std::max(err, max_abs_diff(r, channels[c]));
    lo = c ? std::min(lo, r.min_value()) : r.min_value();
    hi = c ? std::max(hi, r.max_value()) : r.max_value();
    for (double& v : r.raw()) v += a.offset;
    channels[c] = std::move(r);
  }
  save_image(MultiChannelImage(channels), a.out);
  json side = {{"min", lo}, {"max", hi}};
  if (!a.drop_ll) side["max_abs_reconstruction_error"] = err;
  side["run_config"] = {{"command", "reconstruct"}, {"in", a.in},         {"family", a.family}, {"mode", a.mode},
                        {"drop_ll", a.drop_ll},     {"offset", a.offset}, {"levels", a.levels}};
  write_json(a.out + ".json", side);
  std::cout << "wrote " << a.out << " (range " << fmt(lo) << " .. " << fmt(hi) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wavelet sub-band differential morph detection"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a key=value file (flags take precedence)");
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic face-like corpus with morphs");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--subjects", synth.opt.n_subjects, "Number of subjects")->capture_default_str();
  s->add_option("--per-subject", synth.opt.imgs_per_subject, "Bona fide images per subject")->capture_default_str();
  s->add_option("--morphs", synth.opt.n_morphs, "Number of morphs (0 = one per subject)")->capture_default_str();
  s->add_option("--size", synth.opt.size, "Image side in pixels")->capture_default_str();
  s->add_option("--noise", synth.opt.noise_sigma, "Per-image noise sigma")->capture_default_str();
  s->add_option("--seed", synth.opt.seed, "Random seed")->capture_default_str();
  s->add_flag("--smooth-morphs", synth.opt.smooth_morphs, "Blur morphs with [1 2 1]/4 after blending");

  DecomposeArgs dec;
  auto* d = app.add_subcommand("decompose", "Dump the 48 sub-bands (144 in rgb mode) of an image");
  d->add_option("--in", dec.in, "Input image (PNG/PGM/PPM)")->required();
  d->add_option("--out", dec.out, "Output directory")->required();
  d->add_option("--family", dec.family, "Wavelet family: haar|db2|db4")->capture_default_str();
  d->add_option("--mode", dec.mode, "gray|rgb")->capture_default_str();
  d->add_option("--size", dec.size, "Resize to a square of this side first (0 = keep)")->capture_default_str();

  RankArgs rank;
  auto* r = app.add_subcommand("rank-bands", "Rank sub-bands by entropy KL divergence and select the top k");
  r->add_option("--manifest,--manifests", rank.manifests, "One or more manifests (one dataset each)")->required();
  r->add_option("--out", rank.out, "Output directory")->capture_default_str();
  r->add_option("--family", rank.family, "Wavelet family: haar|db2|db4")->capture_default_str();
  r->add_option("--entropy-bins", rank.entropy_bins, "Histogram bins for band entropy")->capture_default_str();
  r->add_option("--kld-direction", rank.kld_direction, "bona_fide_to_morph|morph_to_bona_fide|symmetric")
      ->capture_default_str();
  r->add_option("--k", rank.k, "Number of bands to select")->capture_default_str();
  r->add_option("--size", rank.size, "Images are resized to this side")->capture_default_str();
  r->add_option("--subset", rank.subset, "all|train (train: only training-split subjects)")->capture_default_str();
  r->add_option("--fraction", rank.fraction, "Train fraction for --subset train")->capture_default_str();
  r->add_option("--val-fraction", rank.val_fraction, "Validation share of the test side")->capture_default_str();
  r->add_option("--seed", rank.seed, "Split seed for --subset train")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the pair network on selected sub-bands");
  t->add_option("--manifest,--manifests", tr.manifests, "One or more manifests")->required();
  t->add_option("--mask", tr.mask, "selection_mask.json from rank-bands")->required();
  t->add_option("--out", tr.out, "Checkpoint path")->capture_default_str();
  t->add_option("--log", tr.log, "Training log CSV (default: training_log.csv next to the checkpoint)");
  t->add_option("--family", tr.family, "Wavelet family (default: the mask's)");
  t->add_option("--mode", tr.mode, "gray|rgb")->capture_default_str();
  t->add_option("--size", tr.size, "Images are resized to this side")->capture_default_str();
  t->add_option("--arch", tr.arch, "Conv blocks filters:kernel[:stride],...")->capture_default_str();
  t->add_option("--embedding-dim", tr.embedding_dim, "Embedding size")->capture_default_str();
  t->add_flag("--l2-normalize", tr.l2_normalize, "L2-normalize embeddings");
  t->add_option("--batch", tr.cfg.batch_size, "Pairs per batch (even)")->capture_default_str();
  t->add_option("--lr", tr.cfg.lr0, "Initial learning rate")->capture_default_str();
  t->add_option("--lr-min", tr.cfg.lr_min, "Smallest learning rate")->capture_default_str();
  t->add_option("--plateau", tr.cfg.plateau_patience, "Epochs without a new low before lr/10")->capture_default_str();
  t->add_option("--stop", tr.cfg.stop_patience, "Epochs without a new low before stopping")->capture_default_str();
  t->add_option("--max-epochs", tr.cfg.max_epochs, "Epoch limit")->capture_default_str();
  t->add_option("--margin", tr.margin, "Contrastive margin")->capture_default_str();
  t->add_flag("--no-augment", tr.no_augment, "Disable horizontal-flip augmentation");
  t->add_option("--fraction", tr.fraction, "Share of subjects used for training")->capture_default_str();
  t->add_option("--val-fraction", tr.val_fraction, "Validation share of the test side")->capture_default_str();
  t->add_option("--seed", tr.cfg.seed, "Seed for split, init and batching")->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score pairs and write metrics, scores and DET curve");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--manifest,--manifests", ev.manifests, "One or more manifests")->required();
  e->add_option("--mask", ev.mask, "Optional mask file; must match the checkpoint");
  e->add_option("--mode", ev.mode, "gray|rgb (default: the checkpoint's)");
  e->add_option("--out-dir", ev.out_dir, "Output directory")->capture_default_str();
  e->add_option("--split", ev.split, "test|val|all")->capture_default_str();
  e->add_option("--fraction", ev.fraction, "Override the training split fraction");
  e->add_option("--val-fraction", ev.val_fraction, "Override the validation fraction");
  e->add_option("--seed", ev.seed, "Override the split seed");

  ReconstructArgs rec;
  auto* c = app.add_subcommand("reconstruct", "Inverse transform, or the LL-removed image with --drop-ll");
  c->add_option("--in", rec.in, "Input image")->required();
  c->add_option("--out", rec.out, "Output image (.png/.pgm/.ppm)")->required();
  c->add_option("--family", rec.family, "Wavelet family: haar|db2|db4")->capture_default_str();
  c->add_option("--mode", rec.mode, "gray|rgb")->capture_default_str();
  c->add_flag("--drop-ll", rec.drop_ll, "Zero the level-1 LL band before inverting");
  c->add_option("--offset", rec.offset, "Added to every output value before saving")->capture_default_str();
  c->add_option("--levels", rec.levels, "Pyramid depth without --drop-ll")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    thread_limit() = threads;
    if (s->parsed()) return run_synth(synth);
    if (d->parsed()) return run_decompose(dec);
    if (r->parsed()) return run_rank_bands(rank);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_evaluate(ev);
    if (c->parsed()) return run_reconstruct(rec);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
