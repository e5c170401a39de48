#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lgfa/checkpoint.hpp"
#include "lgfa/error.hpp"
#include "lgfa/extract.hpp"
#include "lgfa/gradcheck.hpp"
#include "lgfa/metrics.hpp"
#include "lgfa/model.hpp"
#include "lgfa/synth.hpp"
#include "lgfa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckFailed = 3;

std::uint64_t fnv1a64_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw lgfa::IoError("hash: cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_utc);
  return buf;
}

// Run directory <out>/<timestamp>_seed<seed>; suffixed when it collides.
fs::path make_run_dir(const fs::path& out_root, std::uint64_t seed) {
  const std::string base = utc_timestamp() + "_seed" + std::to_string(seed);
  fs::path dir = out_root / base;
  for (int i = 1; fs::exists(dir); ++i) dir = out_root / (base + "_" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

// Lists every file under the run directory with size and content hash.
void write_run_manifest(const fs::path& run_dir) {
  json files = json::array();
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "run-manifest.json") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    files.push_back({{"path", fs::relative(p, run_dir).generic_string()},
                     {"bytes", fs::file_size(p)},
                     {"fnv1a64", hex64(fnv1a64_file(p))}});
  }
  std::ofstream os(run_dir / "run-manifest.json");
  os << json{{"files", files}}.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw lgfa::IoError("cannot write " + path.string());
  os << text;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw lgfa::ConfigError("config file " + path + ": cannot open");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw lgfa::ConfigError("config file " + path + ": " + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "model" && it.key() != "train" && it.key() != "frontend") {
      throw lgfa::ConfigError("config file " + path + ": unknown section '" + it.key() + "'");
    }
  }
  return j;
}

lgfa::FrontendConfig frontend_from_config(const json& cfg_file) {
  lgfa::FrontendConfig fe;
  if (cfg_file.contains("frontend")) {
    for (auto it = cfg_file.at("frontend").begin(); it != cfg_file.at("frontend").end(); ++it) {
      if (it.key() == "standardize") fe.standardize = it.value().get<bool>();
      else throw lgfa::ConfigError("config: unknown frontend key '" + it.key() + "'");
    }
  }
  return fe;
}

// Options shared by the training-style commands.
struct TrainCliOptions {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir = "runs";
  std::string variant = "t";
  std::string ablation = "full";
  std::string precision;
  std::string folds;
  std::uint64_t seed = 0;
  double lr = 0.0;
  double weight_decay = -1.0;
  int epochs = 0;
  int batch_size = 0;
  int parallel_folds = 0;
  int blocks = 0;
  int frame_dim = 0;
  int segment_dim = 0;

  CLI::App* attach(CLI::App* cmd, bool with_ablation) {
    cmd->add_option("--manifest", manifest_path, "dataset manifest (JSON lines)")->required();
    cmd->add_option("--config", config_path, "JSON config file; flags override it");
    cmd->add_option("--out", out_dir, "output root; a timestamped run dir is created inside");
    cmd->add_option("--seed", seed, "base RNG seed");
    cmd->add_option("--variant", variant, "chunk division: t, f, or tf")
        ->check(CLI::IsMember({"t", "f", "tf"}));
    if (with_ablation) {
      cmd->add_option("--ablation", ablation, "architecture: full, frame, segment, vit-square")
          ->check(CLI::IsMember({"full", "frame", "segment", "vit-square"}));
    }
    cmd->add_option("--epochs", epochs, "training epochs per fold");
    cmd->add_option("--batch-size", batch_size, "mini-batch size");
    cmd->add_option("--lr", lr, "AdamW learning rate");
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    cmd->add_option("--precision", precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--parallel-folds", parallel_folds, "folds trained concurrently");
    cmd->add_option("--folds", folds, "comma-separated fold subset, e.g. 0,2");
    cmd->add_option("--blocks", blocks, "stacked transformer blocks");
    cmd->add_option("--frame-dim", frame_dim, "frame embedding width");
    cmd->add_option("--segment-dim", segment_dim, "segment embedding width");
    return cmd;
  }

  // Merge file config and flag overrides into validated configs.
  void resolve(const CLI::App* cmd, const lgfa::DatasetManifest& manifest,
               lgfa::LgfaConfig& model_cfg, lgfa::TrainConfig& train_cfg) const {
    const json cfg_file = load_config_file(config_path);
    if (cfg_file.contains("model")) model_cfg = lgfa::LgfaConfig::from_json(cfg_file.at("model"));
    if (cfg_file.contains("train")) train_cfg = lgfa::TrainConfig::from_json(cfg_file.at("train"));

    if (cmd->count("--variant")) model_cfg.variant = lgfa::parse_variant(variant);
    const auto* ablation_opt = cmd->get_option_no_throw("--ablation");
    if (ablation_opt && ablation_opt->count()) model_cfg.ablation = lgfa::parse_ablation(ablation);
    if (cmd->count("--blocks")) model_cfg.blocks = blocks;
    if (cmd->count("--frame-dim")) model_cfg.frame_dim = frame_dim;
    if (cmd->count("--segment-dim")) model_cfg.segment_dim = segment_dim;
    if (cmd->count("--epochs")) train_cfg.epochs = epochs;
    if (cmd->count("--batch-size")) train_cfg.batch_size = batch_size;
    if (cmd->count("--lr")) train_cfg.learning_rate = lr;
    if (cmd->count("--weight-decay")) train_cfg.weight_decay = weight_decay;
    if (cmd->count("--precision")) train_cfg.precision = precision;
    if (cmd->count("--parallel-folds")) train_cfg.parallel_folds = parallel_folds;
    if (cmd->count("--seed")) train_cfg.seed = seed;

    // The class count follows the manifest unless the config pinned it.
    const int manifest_classes = static_cast<int>(manifest.classes.size());
    if (!cfg_file.contains("model") || !cfg_file.at("model").contains("n_classes")) {
      model_cfg.n_classes = manifest_classes;
    } else if (model_cfg.n_classes != manifest_classes) {
      throw lgfa::ConfigError("config: n_classes " + std::to_string(model_cfg.n_classes) +
                              " does not match manifest class table of " +
                              std::to_string(manifest_classes));
    }
    model_cfg.validate();
    train_cfg.validate();
  }

  std::vector<int> fold_subset() const {
    std::vector<int> out;
    if (folds.empty()) return out;
    std::istringstream is(folds);
    std::string item;
    while (std::getline(is, item, ',')) {
      try {
        out.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw lgfa::ConfigError("--folds: bad fold index '" + item + "'");
      }
    }
    return out;
  }
};

template <typename T>
lgfa::EvalReport run_training(const lgfa::DatasetManifest& manifest,
                              const lgfa::LgfaConfig& model_cfg,
                              const lgfa::TrainConfig& train_cfg, const fs::path& run_dir,
                              const std::vector<int>& fold_subset, const std::string& tag) {
  auto on_fold = [&](int fold, lgfa::LgfaModel<T>& model) {
    const std::string name =
        tag.empty() ? "fold" + std::to_string(fold) + ".ckpt"
                    : tag + "_fold" + std::to_string(fold) + ".ckpt";
    lgfa::save_checkpoint(run_dir / name, model);
    std::cout << "  fold " << fold << " done\n";
  };
  return lgfa::run_loso<T>(manifest, model_cfg, train_cfg, on_fold, fold_subset);
}

lgfa::EvalReport dispatch_training(const lgfa::DatasetManifest& manifest,
                                   const lgfa::LgfaConfig& model_cfg,
                                   const lgfa::TrainConfig& train_cfg, const fs::path& run_dir,
                                   const std::vector<int>& fold_subset, const std::string& tag) {
  if (train_cfg.precision == "f64") {
    return run_training<double>(manifest, model_cfg, train_cfg, run_dir, fold_subset, tag);
  }
  return run_training<float>(manifest, model_cfg, train_cfg, run_dir, fold_subset, tag);
}

void save_report(const lgfa::EvalReport& report, const fs::path& run_dir,
                 const std::string& stem) {
  write_text(run_dir / (stem + ".json"), report.to_json().dump(2) + "\n");
  write_text(run_dir / (stem + ".txt"), report.to_text());
}

int cmd_extract(const std::string& in_dir, const std::string& labels_path,
                const std::string& out_dir, bool standardize, bool force,
                const std::string& config_path) {
  const json cfg_file = load_config_file(config_path);
  lgfa::ExtractOptions opt;
  opt.frontend = frontend_from_config(cfg_file);
  if (standardize) opt.frontend.standardize = true;
  opt.frontend.validate();
  opt.skip_up_to_date = !force;

  const fs::path wav_dir(in_dir);
  if (!fs::is_directory(wav_dir)) {
    throw lgfa::ConfigError("extract: input directory " + in_dir + " does not exist");
  }
  const fs::path csv = labels_path.empty() ? wav_dir / "labels.csv" : fs::path(labels_path);

  std::vector<lgfa::LabeledWav> inputs;
  if (fs::exists(csv)) {
    inputs = lgfa::read_labels_csv(csv, wav_dir);
  } else {
    std::cerr << "warning: no labels csv at " << csv << "; nothing to extract\n";
  }
  const auto outcome = lgfa::extract_corpus(inputs, out_dir, opt);
  std::cout << "extract: " << outcome.files_written << " written, " << outcome.files_skipped
            << " up to date, " << outcome.failures.size() << " failed; manifest at "
            << outcome.manifest_path << "\n";
  for (const auto& f : outcome.failures) std::cerr << "  failed: " << f << "\n";
  return outcome.failures.empty() ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested frame/segment transformer for audio classification"};
  app.require_subcommand(1);

  // extract
  auto* extract = app.add_subcommand("extract", "log-mel features from a wav directory");
  std::string ex_in, ex_labels, ex_out = "features", ex_config;
  bool ex_std = false, ex_force = false;
  extract->add_option("--in", ex_in, "directory of PCM16 wav files")->required();
  extract->add_option("--labels", ex_labels, "csv: file,speaker,label (default <in>/labels.csv)");
  extract->add_option("--out", ex_out, "feature output directory");
  extract->add_option("--config", ex_config, "JSON config file");
  extract->add_flag("--standardize", ex_std, "per-sample mean/variance normalization");
  extract->add_flag("--force", ex_force, "re-extract even when outputs are up to date");

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic tone-burst corpus");
  std::string sy_out = "synth_corpus";
  lgfa::SynthConfig sy_cfg;
  bool sy_no_self_test = false;
  synth->add_option("--out", sy_out, "corpus output directory");
  synth->add_option("--seed", sy_cfg.seed, "corpus seed");
  synth->add_option("--speakers", sy_cfg.n_speakers, "number of speakers");
  synth->add_option("--classes", sy_cfg.n_classes, "number of classes");
  synth->add_option("--per-class", sy_cfg.utterances_per_class,
                    "utterances per speaker per class");
  synth->add_option("--noise", sy_cfg.noise_level, "white noise level");
  synth->add_flag("--no-self-test", sy_no_self_test, "skip the centroid separability check");

  // train
  auto* train = app.add_subcommand("train", "LOSO training and evaluation");
  TrainCliOptions tr;
  tr.attach(train, true);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string ev_ckpt, ev_manifest, ev_out = "runs", ev_precision = "f32";
  std::uint64_t ev_seed = 0;
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  eval->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  eval->add_option("--out", ev_out, "output root");
  eval->add_option("--seed", ev_seed, "seed recorded in the run directory name");
  eval->add_option("--precision", ev_precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_out;
  std::uint64_t gc_seed = 1234;
  gradcheck->add_option("--seed", gc_seed, "seed for the randomized inputs");
  gradcheck->add_option("--out", gc_out, "optional output root for the json report");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train all architecture reductions and compare");
  TrainCliOptions ab;
  ab.attach(ablate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*extract) {
      return cmd_extract(ex_in, ex_labels, ex_out, ex_std, ex_force, ex_config);
    }

    if (*synth) {
      sy_cfg.validate();
      lgfa::FrontendConfig fe;
      const auto outcome = lgfa::synth_dataset(sy_cfg, sy_out, fe, !sy_no_self_test);
      std::cout << "synth: " << outcome.n_wavs << " wavs, manifest at " << outcome.manifest_path
                << "\n";
      if (!sy_no_self_test) {
        std::cout << "  centroid self-test accuracy: " << outcome.centroid_loso_accuracy << "\n";
      }
      return kExitOk;
    }

    if (*train) {
      const auto manifest = lgfa::load_manifest(tr.manifest_path);
      manifest.validate();
      lgfa::LgfaConfig model_cfg;
      lgfa::TrainConfig train_cfg;
      tr.resolve(train, manifest, model_cfg, train_cfg);
      const auto subset = tr.fold_subset();

      const fs::path run_dir = make_run_dir(tr.out_dir, train_cfg.seed);
      std::cout << "training variant " << lgfa::variant_name(model_cfg.variant) << ", ablation "
                << lgfa::ablation_name(model_cfg.ablation) << " -> " << run_dir << "\n";
      const auto report =
          dispatch_training(manifest, model_cfg, train_cfg, run_dir, subset, "");
      save_report(report, run_dir, "report");
      write_run_manifest(run_dir);
      std::cout << report.to_text();
      return kExitOk;
    }

    if (*eval) {
      const auto manifest = lgfa::load_manifest(ev_manifest);
      manifest.validate();
      const fs::path run_dir = make_run_dir(ev_out, ev_seed);
      lgfa::EvalReport report;
      lgfa::ConfusionMatrix cm;
      if (ev_precision == "f64") {
        auto model = lgfa::load_checkpoint<double>(ev_ckpt);
        const auto utts = lgfa::load_utterances(manifest, model.config());
        std::vector<const lgfa::LoadedUtterance*> ptrs;
        for (const auto& u : utts) ptrs.push_back(&u);
        cm = lgfa::evaluate_utterances(model, ptrs);
        report.model = json{{"variant", lgfa::variant_name(model.config().variant)},
                            {"ablation", lgfa::ablation_name(model.config().ablation)},
                            {"token_count", model.token_count()},
                            {"classifier_input_width", model.classifier_input_width()},
                            {"config", model.config().to_json()}};
      } else {
        auto model = lgfa::load_checkpoint<float>(ev_ckpt);
        const auto utts = lgfa::load_utterances(manifest, model.config());
        std::vector<const lgfa::LoadedUtterance*> ptrs;
        for (const auto& u : utts) ptrs.push_back(&u);
        cm = lgfa::evaluate_utterances(model, ptrs);
        report.model = json{{"variant", lgfa::variant_name(model.config().variant)},
                            {"ablation", lgfa::ablation_name(model.config().ablation)},
                            {"token_count", model.token_count()},
                            {"classifier_input_width", model.classifier_input_width()},
                            {"config", model.config().to_json()}};
      }
      const auto metrics = lgfa::compute_metrics(cm);
      lgfa::FoldReport fr;
      fr.fold_index = 0;
      fr.test_speaker = "(manifest)";
      fr.confusion = cm;
      fr.war = metrics.war;
      fr.uar = metrics.uar;
      fr.n_test_utterances = static_cast<int>(manifest.records.size());
      report.folds.push_back(fr);
      report.pooled = cm;
      report.pooled_war = metrics.war;
      report.pooled_uar = metrics.uar;
      report.train_config = json::object();
      save_report(report, run_dir, "eval-report");
      write_run_manifest(run_dir);
      std::cout << report.to_text();
      return kExitOk;
    }

    if (*gradcheck) {
      lgfa::GradCheckSettings primitive_settings;  // 1e-4
      lgfa::GradCheckSettings e2e_settings;
      e2e_settings.rel_tol = 1e-3;

      bool all_passed = true;
      json rows = json::array();
      std::printf("%-28s %-12s %-8s %s\n", "op", "max rel err", "status", "worst parameter");
      auto report_row = [&](const lgfa::GradCheckResult& r) {
        all_passed = all_passed && r.passed;
        std::printf("%-28s %-12.3e %-8s %s\n", r.name.c_str(), r.max_rel_err,
                    r.passed ? "pass" : "FAIL", r.worst_param.c_str());
        rows.push_back({{"op", r.name},
                        {"max_rel_err", r.max_rel_err},
                        {"passed", r.passed},
                        {"worst_param", r.worst_param},
                        {"worst_index", r.worst_index},
                        {"coords_checked", r.coords_checked}});
      };
      for (auto& c : lgfa::primitive_grad_cases(gc_seed)) {
        report_row(lgfa::run_grad_check(c, primitive_settings));
      }
      auto e2e = lgfa::end_to_end_grad_case(gc_seed);
      report_row(lgfa::run_grad_check(e2e, e2e_settings));

      if (!gc_out.empty()) {
        const fs::path run_dir = make_run_dir(gc_out, gc_seed);
        write_text(run_dir / "gradcheck-report.json",
                   json{{"all_passed", all_passed}, {"checks", rows}}.dump(2) + "\n");
        write_run_manifest(run_dir);
      }
      std::cout << (all_passed ? "gradcheck: all checks passed\n"
                               : "gradcheck: FAILURES present\n");
      return all_passed ? kExitOk : kExitCheckFailed;
    }

    if (*ablate) {
      const auto manifest = lgfa::load_manifest(ab.manifest_path);
      manifest.validate();
      lgfa::LgfaConfig base_cfg;
      lgfa::TrainConfig train_cfg;
      ab.resolve(ablate, manifest, base_cfg, train_cfg);
      const auto subset = ab.fold_subset();

      // Validate every ablation config before any training starts.
      const std::vector<lgfa::Ablation> all = {
          lgfa::Ablation::kFull, lgfa::Ablation::kFrameOnly, lgfa::Ablation::kSegmentOnly,
          lgfa::Ablation::kVitSquare};
      std::vector<lgfa::LgfaConfig> configs;
      for (auto a : all) {
        lgfa::LgfaConfig cfg = base_cfg;
        cfg.ablation = a;
        cfg.variant = lgfa::Variant::kTime;
        cfg.validate();
        configs.push_back(cfg);
      }

      const fs::path run_dir = make_run_dir(ab.out_dir, train_cfg.seed);
      std::ostringstream table;
      table << "ablation      pooled WAR  pooled UAR\n";
      for (const auto& cfg : configs) {
        const std::string name = lgfa::ablation_name(cfg.ablation);
        std::cout << "ablation '" << name << "'\n";
        const auto report = dispatch_training(manifest, cfg, train_cfg, run_dir, subset, name);
        save_report(report, run_dir, "report-" + name);
        char line[128];
        std::snprintf(line, sizeof(line), "%-13s %.4f      %.4f\n", name.c_str(),
                      report.pooled_war, report.pooled_uar);
        table << line;
      }
      write_text(run_dir / "ablate-summary.txt", table.str());
      write_run_manifest(run_dir);
      std::cout << table.str();
      return kExitOk;
    }
  } catch (const lgfa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
