#include "xaibench/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <openssl/evp.h>

#include "xaibench/errors.hpp"
#include "xaibench/png_io.hpp"
#include "xaibench/render.hpp"
#include "xaibench/rng.hpp"
#include "xaibench/ten_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xb::harness {

// --- hashing ------------------------------------------------------------------

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw Error("SHA-256 initialization failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("SHA-256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error("SHA-256 finalization failed");
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kDigits[md[i] >> 4];
      out += kDigits[md[i] & 15];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for hashing");
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::generate: return "generate";
    case Stage::train: return "train";
    case Stage::explain: return "explain";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "?";
}

void tune_allocator() {
#if defined(__GLIBC__)
  // Keep large blocks on the heap and don't return memory eagerly.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

// --- stage bookkeeping --------------------------------------------------------

namespace {

constexpr int kReportFormatVersion = 1;

/// Files below `paths` (recursively), as sorted generic paths relative to root.
std::vector<std::string> list_files(const fs::path& root, const std::vector<fs::path>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    const fs::path full = root / p;
    if (fs::is_regular_file(full)) {
      out.push_back(p.generic_string());
    } else if (fs::is_directory(full)) {
      for (const auto& e : fs::recursive_directory_iterator(full))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Marker {
  std::string fingerprint;
  std::map<std::string, std::string> outputs;  // relative path -> sha256

  /// Identity of the stage result, used as input of downstream fingerprints.
  std::string digest() const { return sha256_hex(json{{"f", fingerprint}, {"o", outputs}}.dump()); }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::optional<Marker> read_marker(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    const json j = read_json(path);
    Marker m;
    m.fingerprint = j.at("fingerprint").get<std::string>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

bool verify(const Marker& m, const fs::path& root) {
  for (const auto& [rel, hash] : m.outputs) {
    const fs::path p = root / rel;
    if (!fs::is_regular_file(p) || sha256_file(p) != hash) return false;
  }
  return true;
}

Marker make_marker(const std::string& fingerprint, const fs::path& root,
                   const std::vector<fs::path>& outputs) {
  Marker m;
  m.fingerprint = fingerprint;
  for (const auto& rel : list_files(root, outputs)) m.outputs[rel] = sha256_file(root / rel);
  return m;
}

void save_marker(const fs::path& path, const Marker& m) {
  fs::create_directories(path.parent_path());
  write_json(path, {{"fingerprint", m.fingerprint}, {"outputs", m.outputs}});
}

/// Files and directories owned by each per-condition stage.
std::vector<fs::path> stage_outputs(Stage s) {
  switch (s) {
    case Stage::generate: return {"dataset"};
    case Stage::train: return {"runs", "selection.json"};
    case Stage::explain: return {"patterns.bin", "patterns.json", "eval_samples.json", "heatmaps"};
    case Stage::evaluate: return {"metrics.csv", "summary.csv", "figures"};
    case Stage::report: return {"report.json", "metrics.csv", "summary.csv", "figures"};
  }
  return {};
}

std::string fmt_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Hash of a background archive directory: names and contents of its PNGs.
std::string archive_digest(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("background directory " + dir.string() + " not found");
  json listing = json::object();
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      listing[e.path().filename().string()] = sha256_file(e.path());
  return sha256_hex(listing.dump());
}

json dataset_json(const synth::DatasetConfig& d) {
  json j = d;
  if (d.archive) j["archive"] = archive_digest(*d.archive);
  return j;
}

struct StagePaths {
  fs::path root;  // the condition directory
  fs::path marker;
};

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const Condition& cond, fs::path dir)
      : cfg_(cfg), cond_(cond), dir_(std::move(dir)) {}

  fs::path marker_path(Stage s) const { return dir_ / "stages" / (to_string(s) + ".json"); }

  /// Fingerprint of a stage given the verified marker of its predecessor.
  std::string fingerprint(Stage s) const {
    json j{{"stage", to_string(s)}, {"condition", cond_.name}};
    switch (s) {
      case Stage::generate:
        j["dataset"] = dataset_json(cond_.dataset);
        break;
      case Stage::train:
        j["upstream"] = upstream(Stage::generate).digest();
        j["architecture"] = cfg_.architecture();
        j["hyperparams"] = cfg_.hp;
        j["seed"] = cfg_.seed;
        break;
      case Stage::explain: {
        j["upstream"] = upstream(Stage::train).digest();
        json full = cfg_;
        j["methods"] = full["methods"];
        j["rules"] = full["rules"];
        j["pattern_samples"] = cfg_.pattern_samples;
        j["count"] = cfg_.eval_count;
        j["selection"] = cfg_.eval_selection;
        j["seed"] = cfg_.seed;
        break;
      }
      case Stage::evaluate:
        j["upstream"] = upstream(Stage::explain).digest();
        j["evaluation"] = json(cfg_)["evaluation"];
        break;
      case Stage::report:
        break;
    }
    return sha256_hex(j.dump());
  }

  /// Verified marker of a completed stage whose fingerprint matches the
  /// current configuration, or nullopt.
  std::optional<Marker> completed(Stage s) const {
    auto m = read_marker(marker_path(s));
    if (!m || m->fingerprint != fingerprint(s) || !verify(*m, dir_)) return std::nullopt;
    return m;
  }

  Marker upstream(Stage s) const {
    auto m = read_marker(marker_path(s));
    if (!m || !verify(*m, dir_))
      throw StageError(to_string(next(s)),
                       "outputs of stage '" + to_string(s) + "' for condition '" + cond_.name +
                           "' are missing or damaged; run '" + to_string(s) + "' first",
                       true);
    if (m->fingerprint != fingerprint(s))
      throw StageError(to_string(next(s)),
                       "outputs of stage '" + to_string(s) + "' for condition '" + cond_.name +
                           "' were produced with a different configuration; rerun '" +
                           to_string(s) + "'",
                       true);
    return *m;
  }

  void finish(Stage s) const {
    save_marker(marker_path(s), make_marker(fingerprint(s), dir_, stage_outputs(s)));
  }

  void clear(Stage s) const {
    fs::remove(marker_path(s));
    for (const auto& p : stage_outputs(s)) fs::remove_all(dir_ / p);
  }

 private:
  static Stage next(Stage s) { return static_cast<Stage>(static_cast<int>(s) + 1); }

  const ExperimentConfig& cfg_;
  const Condition& cond_;
  fs::path dir_;
};

std::string sample_id(std::size_t index) { return "holdout/" + std::to_string(index); }

/// Rows of an (N, H, W) f32 tensor as images.
std::vector<Image> tensor_images(const fs::path& path) {
  const TenArray t = load_ten(path);
  if (t.type != TenType::f32 || t.dims.size() != 3)
    throw IoError(path.string() + " is not an (N, H, W) float tensor");
  const auto n = t.dims[0], h = t.dims[1], w = t.dims[2];
  std::vector<Image> out;
  out.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k)
    out.push_back(Eigen::Map<const Image>(t.f32.data() + std::size_t{k} * h * w, h, w));
  return out;
}

template <typename F>
auto stage_guard(Stage s, const std::string& cond, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(to_string(s), "condition '" + cond + "': " + e.what());
  }
}

}  // namespace

// --- experiment ---------------------------------------------------------------

Experiment::Experiment(ExperimentConfig config, std::ostream* log)
    : config_(std::move(config)), log_(log) {
  config_.validate();
}

fs::path Experiment::condition_dir(const Condition& c) const { return config_.out / c.name; }

void Experiment::note(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

#define XB_STAGE_LOOP(STAGE, RUN)                                                     \
  for (const auto& c : config_.conditions()) {                                        \
    Pipeline p(config_, c, condition_dir(c));                                         \
    stage_guard(STAGE, c.name, [&] {                                                  \
      if (!force && p.completed(STAGE)) {                                             \
        note("[" + to_string(STAGE) + "] " + c.name + ": up to date");                \
        return;                                                                       \
      }                                                                               \
      RUN(c);                                                                         \
    });                                                                               \
  }

void Experiment::generate(bool force) { XB_STAGE_LOOP(Stage::generate, run_generate) }
void Experiment::train(bool force) { XB_STAGE_LOOP(Stage::train, run_train) }
void Experiment::explain(bool force) { XB_STAGE_LOOP(Stage::explain, run_explain) }
void Experiment::evaluate(bool force) { XB_STAGE_LOOP(Stage::evaluate, run_evaluate) }

#undef XB_STAGE_LOOP

void Experiment::run_generate(const Condition& c) {
  const fs::path dir = condition_dir(c);
  Pipeline p(config_, c, dir);
  p.clear(Stage::generate);
  fs::create_directories(dir);
  note("[generate] " + c.name + ": building dataset");
  synth::build_dataset(c.dataset, dir / "dataset");
  p.finish(Stage::generate);
}

void Experiment::run_train(const Condition& c) {
  const fs::path dir = condition_dir(c);
  Pipeline p(config_, c, dir);
  p.upstream(Stage::generate);
  const std::string fp = p.fingerprint(Stage::train);
  fs::remove(p.marker_path(Stage::train));
  fs::remove(dir / "selection.json");

  const synth::Dataset ds(dir / "dataset");
  const train::SplitSource tr(ds.train()), va(ds.val()), ho(ds.holdout());
  std::vector<double> accuracies;
  for (int k = 0; k < config_.hp.runs; ++k) {
    const fs::path run_dir = dir / "runs" / std::to_string(k);
    const std::string run_fp = sha256_hex(fp + "/" + std::to_string(k));
    // Completed runs are kept; a long paper-scale stage resumes per run.
    if (fs::exists(run_dir / "run.json")) {
      const json r = read_json(run_dir / "run.json");
      if (r.value("fingerprint", "") == run_fp && fs::exists(run_dir / "checkpoint.bin") &&
          sha256_file(run_dir / "checkpoint.bin") == r.value("checkpoint_sha256", "")) {
        accuracies.push_back(r.at("holdout").at("accuracy").get<double>());
        note("[train] " + c.name + " run " + std::to_string(k) + ": reusing");
        continue;
      }
    }
    fs::remove_all(run_dir);
    fs::create_directories(run_dir);

    const auto k64 = static_cast<std::uint64_t>(k);
    const std::uint64_t init_seed = derive_seed(config_.seed, stream_tag("init"), k64);
    train::Hyperparams hp = config_.hp;
    hp.shuffle_seed = derive_seed(config_.seed, stream_tag("shuffle"), k64);
    note("[train] " + c.name + " run " + std::to_string(k) + ": " +
         std::to_string(tr.size()) + " samples, up to " + std::to_string(hp.max_epochs) +
         " epochs");
    auto result = train::train(net::build_model<float>(config_.architecture(), init_seed), tr,
                               va, hp, [&](const train::EpochStats& e) {
                                 note("[train]   epoch " + std::to_string(e.epoch) +
                                      " loss " + fmt_acc(e.train_loss) + " val_loss " +
                                      fmt_acc(e.val_loss) + " val_acc " +
                                      fmt_acc(e.val_accuracy));
                               });
    const auto holdout = train::evaluate(result.model, ho, hp.eval_batch_size);
    accuracies.push_back(holdout.accuracy);
    note("[train] " + c.name + " run " + std::to_string(k) + ": holdout accuracy " +
         fmt_acc(holdout.accuracy) + " (" + train::to_string(result.history.stop_reason) + ")");

    net::save_checkpoint(run_dir / "checkpoint.bin", result.model,
                         {{"condition", c.name}, {"run", k}});
    result.history.write_csv(run_dir / "history.csv");
    const auto& h = result.history;
    write_json(run_dir / "run.json",
               {{"run", k},
                {"init_seed", init_seed},
                {"shuffle_seed", hp.shuffle_seed},
                {"epochs", h.epochs.size()},
                {"stop_reason", train::to_string(h.stop_reason)},
                {"best_epoch", h.best_epoch},
                {"final_train_loss", h.epochs.empty() ? 0.0 : h.epochs.back().train_loss},
                {"holdout", {{"loss", holdout.loss}, {"accuracy", holdout.accuracy}}},
                {"fingerprint", run_fp},
                {"checkpoint_sha256", sha256_file(run_dir / "checkpoint.bin")}});
  }
  // Runs beyond the configured count belong to an older configuration.
  for (int k = config_.hp.runs; fs::exists(dir / "runs" / std::to_string(k)); ++k)
    fs::remove_all(dir / "runs" / std::to_string(k));

  const auto sel = train::select_best(accuracies);
  write_json(dir / "selection.json",
             {{"best_run", sel.best_index},
              {"accuracies", sel.accuracies},
              {"mean_accuracy", sel.mean_accuracy},
              {"std_accuracy", sel.std_accuracy},
              {"rule", "highest holdout accuracy; ties go to the lowest run index"}});
  note("[train] " + c.name + ": holdout accuracy " + fmt_acc(sel.mean_accuracy) + " +- " +
       fmt_acc(sel.std_accuracy) + ", best run " + std::to_string(sel.best_index));
  p.finish(Stage::train);
}

void Experiment::run_explain(const Condition& c) {
  const fs::path dir = condition_dir(c);
  Pipeline p(config_, c, dir);
  p.upstream(Stage::train);
  p.clear(Stage::explain);

  const synth::Dataset ds(dir / "dataset");
  const json sel = read_json(dir / "selection.json");
  const int best = sel.at("best_run").get<int>();
  const auto model =
      net::load_checkpoint(dir / "runs" / std::to_string(best) / "checkpoint.bin");
  const auto& holdout = ds.holdout();
  const train::SplitSource ho(holdout), tr(ds.train());

  // Class-2 evaluation samples, plus one sample per class for the montage.
  std::vector<std::size_t> positives;
  for (std::size_t k = 0; k < holdout.size(); ++k)
    if (holdout.label(k) == 2) positives.push_back(k);
  if (positives.size() < static_cast<std::size_t>(config_.eval_count))
    throw ProtocolError("only " + std::to_string(positives.size()) +
                        " class-2 holdout samples for an evaluation count of " +
                        std::to_string(config_.eval_count));
  if (config_.eval_selection == "random") {
    Rng rng(derive_seed(config_.seed, stream_tag("eval")));
    shuffle(positives.begin(), positives.end(), rng);
    positives.resize(static_cast<std::size_t>(config_.eval_count));
    std::sort(positives.begin(), positives.end());
  } else {
    positives.resize(static_cast<std::size_t>(config_.eval_count));
  }
  std::vector<std::size_t> montage;
  for (int cls : {1, 2})
    for (std::size_t k = 0; k < holdout.size(); ++k)
      if (holdout.label(k) == cls) {
        montage.push_back(k);
        break;
      }

  saliency::PatternSet<float> patterns;
  const bool need_patterns = std::any_of(config_.methods.begin(), config_.methods.end(),
                                         saliency::needs_patterns);
  if (need_patterns) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(config_.pattern_samples),
                                         tr.size());
    note("[explain] " + c.name + ": estimating patterns from " + std::to_string(n) +
         " training samples");
    patterns = saliency::estimate_patterns<float>(
        model, [&](std::size_t k) { return tr.input(k); }, n);
    saliency::save_patterns(dir / "patterns.bin", patterns);
    write_json(dir / "patterns.json", patterns.stats);
  }

  const auto shape = holdout.shape();
  const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(positives.size()),
                                        static_cast<std::uint32_t>(shape.height),
                                        static_cast<std::uint32_t>(shape.width)};
  const std::vector<std::uint32_t> mdims{static_cast<std::uint32_t>(montage.size()),
                                         static_cast<std::uint32_t>(shape.height),
                                         static_cast<std::uint32_t>(shape.width)};
  std::vector<std::unique_ptr<TenWriter>> writers, montage_writers;
  for (auto m : config_.methods) {
    const fs::path mdir = dir / "heatmaps" / saliency::to_string(m);
    fs::create_directories(mdir);
    writers.push_back(std::make_unique<TenWriter>(mdir / "heatmaps.ten", dims, TenType::f32));
    montage_writers.push_back(
        std::make_unique<TenWriter>(mdir / "montage.ten", mdims, TenType::f32));
  }

  auto explain_into = [&](std::size_t index, std::vector<std::unique_ptr<TenWriter>>& out) {
    const auto fwd = net::forward(model, ho.input(index));
    const int target = ho.label(index);  // true class, 0-based
    for (std::size_t m = 0; m < config_.methods.size(); ++m) {
      saliency::MethodSpec spec = config_.rules;
      spec.kind = config_.methods[m];
      const auto h = saliency::explain(model, fwd.record, spec, target,
                                       need_patterns ? &patterns : nullptr);
      out[m]->append(std::span<const float>(h.relevance.data(),
                                            static_cast<std::size_t>(h.relevance.size())));
    }
  };
  note("[explain] " + c.name + ": " + std::to_string(positives.size()) + " samples x " +
       std::to_string(config_.methods.size()) + " methods");
  for (auto k : positives) explain_into(k, writers);
  for (auto k : montage) explain_into(k, montage_writers);
  for (auto& w : writers) w->close();
  for (auto& w : montage_writers) w->close();

  std::vector<std::string> ids, montage_ids;
  for (auto k : positives) ids.push_back(sample_id(k));
  for (auto k : montage) montage_ids.push_back(sample_id(k));
  for (auto m : config_.methods)
    write_json(dir / "heatmaps" / saliency::to_string(m) / "heatmaps.json",
               {{"method", saliency::to_string(m)},
                {"target", "true class"},
                {"start", saliency::starts_at_logit(m) ? "logit value" : "one"},
                {"sample_ids", ids},
                {"montage_ids", montage_ids}});
  write_json(dir / "eval_samples.json", {{"selection", config_.eval_selection},
                                         {"count", positives.size()},
                                         {"indices", positives},
                                         {"montage_indices", montage}});
  p.finish(Stage::explain);
}

void Experiment::run_evaluate(const Condition& c) {
  const fs::path dir = condition_dir(c);
  Pipeline p(config_, c, dir);
  p.upstream(Stage::explain);
  p.clear(Stage::evaluate);

  const synth::Dataset ds(dir / "dataset");
  const auto& holdout = ds.holdout();
  const json samples = read_json(dir / "eval_samples.json");
  const auto indices = samples.at("indices").get<std::vector<std::size_t>>();

  std::vector<Mask> truth, regions;
  std::vector<int> labels;
  for (auto k : indices) {
    truth.push_back(holdout.ground_truth(k));
    regions.push_back(config_.mask_restricted ? holdout.mask(k) : Mask());
    labels.push_back(holdout.label(k));
  }
  std::vector<std::vector<Image>> heatmaps;
  std::vector<metrics::HeatmapSample> items;
  heatmaps.reserve(config_.methods.size());
  for (auto m : config_.methods)
    heatmaps.push_back(
        tensor_images(dir / "heatmaps" / saliency::to_string(m) / "heatmaps.ten"));
  for (std::size_t m = 0; m < config_.methods.size(); ++m) {
    if (heatmaps[m].size() != indices.size())
      throw IoError("heatmap count differs from the evaluation sample count");
    for (std::size_t i = 0; i < indices.size(); ++i)
      items.push_back({sample_id(indices[i]), saliency::to_string(config_.methods[m]),
                       &heatmaps[m][i], &truth[i], labels[i],
                       config_.mask_restricted ? &regions[i] : nullptr});
  }
  const auto report = metrics::evaluate_heatmaps(items, config_.transform, config_.specificity);
  metrics::write_metrics_csv(dir / "metrics.csv", report, c.name);
  metrics::write_summary_csv(dir / "summary.csv", report, c.name);
  fs::create_directories(dir / "figures");
  render_boxplots(dir / "figures" / "boxplots.svg", report,
                  "Explanation performance (" + c.name + ", " +
                      std::to_string(report.sample_count) + " class-2 samples, " +
                      metrics::to_string(config_.transform) + " scores)");
  for (const auto& s : report.summaries)
    note("[evaluate] " + c.name + " " + s.method + ": auc " + fmt_acc(s.roc_auc.mean) +
         " ap " + fmt_acc(s.ap.mean) + " prec99 " + fmt_acc(s.prec99.mean));
  p.finish(Stage::evaluate);
}

json Experiment::report(bool force) {
  return stage_guard(Stage::report, "all", [&]() -> json {
    const fs::path root = config_.out;
    const fs::path marker = root / "stages" / "report.json";
    const auto conditions = config_.conditions();

    json upstream = json::array();
    for (const auto& c : conditions)
      upstream.push_back(Pipeline(config_, c, condition_dir(c)).upstream(Stage::evaluate).digest());
    const std::string fp =
        sha256_hex(json{{"stage", "report"}, {"config", config_}, {"upstream", upstream}}.dump());
    if (!force) {
      auto m = read_marker(marker);
      if (m && m->fingerprint == fp && verify(*m, root)) {
        note("[report] up to date");
        return read_json(root / "report.json");
      }
    }
    fs::remove(marker);
    for (const auto& p : stage_outputs(Stage::report)) fs::remove_all(root / p);
    fs::create_directories(root / "figures");

    json conds = json::array();
    std::vector<MontageRow> montage;
    metrics::MetricsReport combined;
    std::string metrics_csv, summary_csv;
    for (const auto& c : conditions) {
      const fs::path dir = condition_dir(c);
      const json sel = read_json(dir / "selection.json");
      json runs = json::array();
      for (int k = 0; k < config_.hp.runs; ++k) {
        json r = read_json(dir / "runs" / std::to_string(k) / "run.json");
        r.erase("fingerprint");
        runs.push_back(r);
      }
      metrics::MetricsReport mr;
      mr.rows = metrics::read_metrics_csv(dir / "metrics.csv");
      mr.transform = config_.transform;
      mr.specificity = config_.specificity;
      mr.mask_restricted = config_.mask_restricted;
      mr.aggregate();
      for (auto row : mr.rows) {
        if (conditions.size() > 1) row.method = c.name + ":" + row.method;
        combined.rows.push_back(row);
      }

      // Combined CSVs: the first file's comment and header, then all rows.
      for (auto [name, text] : {std::pair{"metrics.csv", &metrics_csv},
                                std::pair{"summary.csv", &summary_csv}}) {
        std::ifstream in(dir / name);
        const bool first = text->empty();
        std::string line;
        for (int k = 0; std::getline(in, line); ++k)
          if (first || k >= 2) *text += line + "\n";
      }

      json patterns = fs::exists(dir / "patterns.json") ? read_json(dir / "patterns.json")
                                                          : json(nullptr);
      json pattern_warnings = patterns.is_object() ? patterns["warnings"] : json::array();
      conds.push_back({{"name", c.name},
                       {"dataset_manifest_sha256", sha256_file(dir / "dataset" / "manifest.json")},
                       {"accuracy",
                        {{"mean", sel.at("mean_accuracy")},
                         {"std", sel.at("std_accuracy")},
                         {"runs", sel.at("accuracies")},
                         {"best_run", sel.at("best_run")}}},
                       {"runs", runs},
                       {"pattern_warnings", pattern_warnings},
                       {"metrics", mr},
                       {"eval_samples", read_json(dir / "eval_samples.json")}});

      // Montage rows: class 1 then class 2 of this condition.
      const synth::Dataset ds(dir / "dataset");
      const json es = read_json(dir / "eval_samples.json");
      const auto mids = es.at("montage_indices").get<std::vector<std::size_t>>();
      std::vector<std::vector<Image>> per_method;
      for (auto m : config_.methods)
        per_method.push_back(
            tensor_images(dir / "heatmaps" / saliency::to_string(m) / "montage.ten"));
      for (std::size_t r = 0; r < mids.size(); ++r) {
        MontageRow row;
        row.label = c.name + " class " + std::to_string(ds.holdout().label(mids[r]));
        row.input = ds.holdout().image(mids[r]);
        row.ground_truth = ds.holdout().ground_truth(mids[r]);
        for (auto& pm : per_method) row.heatmaps.push_back(pm.at(r));
        montage.push_back(std::move(row));
      }
    }
    write_text(root / "metrics.csv", metrics_csv);
    write_text(root / "summary.csv", summary_csv);
    combined.transform = config_.transform;
    combined.specificity = config_.specificity;
    combined.mask_restricted = config_.mask_restricted;
    combined.aggregate();
    render_boxplots(root / "figures" / "boxplots.svg", combined,
                    "Explanation performance, " + std::to_string(config_.eval_count) +
                        " class-2 samples per condition");
    const Shape ms = render_montage(root / "figures" / "montage.png", montage);

    json methods = json::array();
    for (auto m : config_.methods) methods.push_back(saliency::to_string(m));
    json report{
        {"format_version", kReportFormatVersion},
        {"config", config_},
        {"scale_note", config_.scale == Scale::desk
                           ? "desk preset: reduced image size, network depth, splits and "
                             "schedule; paper-scale figures need the paper preset"
                           : "paper preset"},
        {"notes",
         {"best run selected by holdout accuracy, the same split the accuracies are "
          "reported on (as in the reference protocol)",
          "min_delta read as 5e-4",
          "early stopping monitors validation loss and restores the best weights",
          "explanations target the true class and start at the pre-softmax logit",
          "metrics are computed per sample and averaged; scores use the configured transform"}},
        {"conditions", conds},
        {"montage",
         {{"path", "figures/montage.png"},
          {"height", ms.height},
          {"width", ms.width},
          {"columns", json::array({"input", "ground_truth"})}}},
    };
    for (const auto& m : methods) report["montage"]["columns"].push_back(m);

    // Inventory: every artifact except the report itself and stage markers.
    json inventory = json::array();
    for (const auto& rel : list_files(root, {"."})) {
      const fs::path p(rel);
      const std::string norm = p.lexically_normal().generic_string();
      if (norm == "report.json" || norm.find("stages/") != std::string::npos) continue;
      inventory.push_back({{"path", norm},
                           {"bytes", fs::file_size(root / p)},
                           {"sha256", sha256_file(root / p)}});
    }
    std::sort(inventory.begin(), inventory.end(),
              [](const json& a, const json& b) { return a["path"] < b["path"]; });
    report["inventory"] = inventory;
    write_json(root / "report.json", report);
    save_marker(marker, make_marker(fp, root, stage_outputs(Stage::report)));
    note("[report] wrote " + (root / "report.json").string());
    return report;
  });
}

json Experiment::run_all(bool force) {
  generate(force);
  train(force);
  explain(force);
  evaluate(force);
  return report(force);
}

}  // namespace xb::harness
