// Command-line surface for the operator library: verification suites,
// gradient checks, scaling benchmarks, toy training runs and MST1 utilities.
//
// Exit codes: 0 = all checks pass, 1 = check or training failure,
// 2 = usage/config error.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msac/apps.hpp"
#include "msac/bench.hpp"
#include "msac/gradcheck.hpp"
#include "msac/io.hpp"
#include "msac/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json verify_report_json(const msac::VerifyReport& r) {
  nlohmann::json j;
  j["suite"] = r.suite;
  j["trials"] = r.trials;
  j["seed"] = r.seed;
  j["max_abs_deviation"] = r.max_abs_deviation;
  j["max_rel_deviation"] = r.max_rel_deviation;
  j["tolerance"] = r.tolerance;
  j["exact"] = r.exact;
  j["pass"] = r.pass;
  return j;
}

nlohmann::json grad_report_json(const msac::GradReport& r, double tol, bool pass) {
  nlohmann::json j;
  j["op"] = r.op;
  j["max_abs_error"] = r.max_abs_error;
  j["max_rel_error"] = r.max_rel_error;
  j["probe_count"] = r.probe_count;
  j["tolerance"] = tol;
  j["pass"] = pass;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
}

int cmd_verify(const std::string& suite, std::size_t trials, std::uint64_t seed,
               const std::string& out_path) {
  std::vector<msac::VerifyReport> reports;
  if (suite == "all") {
    reports = msac::run_all_verify_suites(trials, seed);
  } else {
    bool known = false;
    for (const std::string& name : msac::verify_suite_names()) known = known || name == suite;
    if (!known) {
      std::cerr << "unknown verify suite '" << suite << "'; choices: lemma1, sac-sa2d, sa2d-1d, all\n";
      return kExitUsage;
    }
    reports.push_back(msac::run_verify_suite(suite, trials, seed));
  }

  nlohmann::json j = nlohmann::json::array();
  bool all_pass = true;
  for (const msac::VerifyReport& r : reports) {
    j.push_back(verify_report_json(r));
    all_pass = all_pass && r.pass;
  }
  std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_text(out_path, text);
  return all_pass ? kExitOk : kExitCheckFailed;
}

int cmd_gradcheck(const std::string& op, std::size_t trials, double eps, double tol,
                  std::uint64_t seed, const std::string& out_path) {
  if (eps <= 0.0) {
    std::cerr << "gradcheck: --eps must be positive\n";
    return kExitUsage;
  }
  if (tol <= 0.0) {
    std::cerr << "gradcheck: --tol must be positive\n";
    return kExitUsage;
  }
  std::vector<std::string> ops;
  if (op == "all") {
    ops = msac::registered_grad_ops();
  } else if (msac::is_registered_grad_op(op)) {
    ops.push_back(op);
  } else {
    std::cerr << "gradcheck: unregistered op '" << op << "'; use one of:";
    for (const std::string& name : msac::registered_grad_ops()) std::cerr << ' ' << name;
    std::cerr << " all\n";
    return kExitUsage;
  }

  bool all_pass = true;
  std::string accum;
  for (const std::string& name : ops) {
    std::size_t n = trials > 0 ? trials : msac::default_grad_trials(name);
    msac::GradReport rep = msac::grad_check(name, n, seed, eps);
    bool pass = rep.max_rel_error < tol;
    all_pass = all_pass && pass;
    std::string line = grad_report_json(rep, tol, pass).dump() + "\n";
    std::cout << line;
    accum += line;
  }
  if (!out_path.empty()) write_text(out_path, accum);
  return all_pass ? kExitOk : kExitCheckFailed;
}

int cmd_bench(const std::string& op, const msac::BenchOptions& opt, const std::string& out_path) {
  msac::BenchResult result = msac::run_bench(op, opt);
  std::string csv = msac::bench_csv_header() + "\n";
  for (const msac::BenchRecord& r : result.records) csv += msac::bench_csv_row(r) + "\n";
  std::cout << csv;
  for (const std::string& note : result.notes) std::cerr << "# " << note << "\n";
  if (!out_path.empty()) write_text(out_path, csv);
  return kExitOk;
}

struct TrainFileConfig {
  msac::TrainConfig train;
  msac::MsacConfig model;
  std::size_t layers = 1;
  // lm
  std::string text = "hello msac!!";
  // similarity
  std::size_t pairs = 16, height = 4, width = 4, channels = 2;
  double noise = 0.1;
  std::string augmentation = "channel";
  std::size_t d_seg = 1;
};

TrainFileConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  TrainFileConfig cfg;
  cfg.train.lr = j.value("lr", 0.1);
  cfg.train.steps = j.value("steps", std::size_t{100});
  cfg.train.seed = j.value("seed", std::uint64_t{42});
  cfg.layers = j.value("layers", std::size_t{1});
  if (j.contains("model")) cfg.model = msac::msac_config_from_json_text(j.at("model").dump());
  if (j.contains("data")) {
    const auto& d = j.at("data");
    cfg.text = d.value("text", cfg.text);
    cfg.pairs = d.value("pairs", cfg.pairs);
    cfg.height = d.value("height", cfg.height);
    cfg.width = d.value("width", cfg.width);
    cfg.channels = d.value("channels", cfg.channels);
    cfg.noise = d.value("noise", cfg.noise);
  }
  if (j.contains("augmentation")) {
    cfg.augmentation = j.at("augmentation").value("mode", cfg.augmentation);
    cfg.d_seg = j.at("augmentation").value("d_seg", cfg.d_seg);
  }
  return cfg;
}

class LossCsvWriter {
 public:
  explicit LossCsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    out_ << "step,loss\n";
    out_.flush();
  }
  void operator()(std::size_t step, double loss) {
    out_ << step << ',' << format_double(loss) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

int cmd_train(const std::string& task, const std::string& config_path,
              const std::string& out_dir) {
  if (task != "lm" && task != "similarity") {
    std::cerr << "train: task must be 'lm' or 'similarity'\n";
    return kExitUsage;
  }
  TrainFileConfig cfg;
  try {
    cfg = parse_train_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return kExitUsage;
  }

  std::filesystem::create_directories(out_dir);
  LossCsvWriter writer(out_dir + "/loss.csv");
  nlohmann::json summary;
  summary["task"] = task;
  summary["steps"] = cfg.train.steps;
  summary["lr"] = cfg.train.lr;
  summary["seed"] = cfg.train.seed;

  msac::TrainResult result;
  if (task == "lm") {
    msac::CharVocab vocab = msac::make_char_vocab(cfg.text);
    std::vector<std::size_t> tokens = vocab.encode(cfg.text);
    msac::Rng init_rng(cfg.model.seed);
    msac::ToyLMModel model =
        msac::make_lm_model(init_rng, vocab.size(), cfg.model, cfg.layers, tokens.size());
    result = msac::train_lm(model, tokens, cfg.train, std::ref(writer));
    if (!result.diverged) {
      msac::save_lm_model(model, out_dir + "/params");
      double ce = msac::mean_cross_entropy(model, tokens);
      summary["final_cross_entropy"] = ce;
      summary["text"] = cfg.text;
      summary["vocab"] = vocab.chars;
    }
  } else {
    msac::Rng data_rng(cfg.train.seed);
    auto dataset = msac::make_similarity_dataset(data_rng, cfg.pairs, cfg.height, cfg.width,
                                                 cfg.channels, cfg.noise);
    msac::save_similarity_dataset(out_dir + "/dataset", dataset);
    msac::SegMode mode =
        cfg.augmentation == "additive" ? msac::SegMode::additive : msac::SegMode::channel;
    msac::MsacConfig model_cfg = cfg.model;
    model_cfg.d = cfg.channels;
    msac::Rng init_rng(cfg.model.seed);
    msac::SimilarityModel model = msac::make_similarity_model(
        init_rng, model_cfg, mode, cfg.d_seg, cfg.height, cfg.width, cfg.layers);
    result = msac::train_similarity(model, dataset, cfg.train, std::ref(writer));
    if (!result.diverged) {
      msac::save_similarity_model(model, out_dir + "/params");
      summary["accuracy"] = msac::similarity_accuracy(model, dataset);
    }
  }

  if (result.diverged) {
    std::cerr << "train: loss became non-finite at step " << result.losses.size() - 1
              << "; partial loss curve retained in " << out_dir << "/loss.csv\n";
    return kExitCheckFailed;
  }
  summary["final_loss"] = result.losses.back();
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_tensor_info(const std::string& path) {
  msac::Tensor t = msac::read_tensor_mst1(path);
  std::cout << "shape: " << msac::shape_to_string(t.shape()) << "\n";
  double lo = t[0], hi = t[0], mean = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
    mean += t[i];
  }
  mean /= static_cast<double>(t.size());
  std::cout << "elements: " << t.size() << "\n";
  std::cout << "min: " << format_double(lo) << "\n";
  std::cout << "max: " << format_double(hi) << "\n";
  std::cout << "mean: " << format_double(mean) << "\n";
  return kExitOk;
}

int cmd_tensor_dump(const std::string& path) {
  msac::Tensor t = msac::read_tensor_mst1(path);
  std::cout << "shape: " << msac::shape_to_string(t.shape()) << "\n";
  for (std::size_t i = 0; i < t.size(); ++i) std::cout << format_double(t[i]) << "\n";
  return kExitOk;
}

int cmd_tensor_random(const std::string& path, const std::vector<std::size_t>& shape,
                      std::uint64_t seed, double lo, double hi) {
  if (shape.empty()) {
    std::cerr << "tensor random: --shape is required, e.g. --shape 3,4,2\n";
    return kExitUsage;
  }
  msac::Rng rng(seed);
  msac::write_tensor_mst1(rng.tensor(shape, lo, hi), path);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msac: multiscale self-attentive convolution toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 42;  // MSAC_SEED overrides the default; flags win
  app.add_option("--seed", seed, "global random seed")->envname("MSAC_SEED");

  auto* verify = app.add_subcommand("verify", "run randomized equivalence suites");
  verify->fallthrough();
  std::string verify_suite;
  std::size_t verify_trials = 100;
  std::string verify_out;
  verify->add_option("suite", verify_suite, "lemma1 | sac-sa2d | sa2d-1d | all")->required();
  verify->add_option("--trials", verify_trials, "randomized trials per suite");
  verify->add_option("--out", verify_out, "write the JSON report here as well");

  auto* gradcheck = app.add_subcommand("gradcheck", "compare gradients to finite differences");
  gradcheck->fallthrough();
  std::string gradcheck_op = "all";
  std::size_t gradcheck_trials = 0;
  double gradcheck_eps = 1e-4, gradcheck_tol = 1e-4;
  std::string gradcheck_out;
  gradcheck->add_option("op", gradcheck_op, "registered op name or 'all'");
  gradcheck->add_option("--trials", gradcheck_trials, "trials per op (0 = per-op default)");
  gradcheck->add_option("--eps", gradcheck_eps, "central-difference step");
  gradcheck->add_option("--tol", gradcheck_tol, "max relative error accepted");
  gradcheck->add_option("--out", gradcheck_out, "write the JSON report stream here as well");

  auto* bench = app.add_subcommand("bench", "time operators over a size grid, emit CSV");
  bench->fallthrough();
  std::string bench_op = "sa2d";
  msac::BenchOptions bench_opt;
  std::string bench_out;
  bench->add_option("operator", bench_op, "conv2d | conv2d_naive | conv2d_patch | sa2d | sac | msac");
  bench->add_option("--sizes", bench_opt.sizes, "square image sizes")->delimiter(',');
  bench->add_option("--repeats", bench_opt.repeats, "timed repeats per configuration");
  bench->add_option("--mem-cap", bench_opt.mem_cap_mib, "live-tensor cap in MiB");
  bench->add_option("--n", bench_opt.n, "filter rows");
  bench->add_option("--m", bench_opt.m, "filter cols");
  bench->add_option("--d", bench_opt.d, "input channels");
  bench->add_option("--d-a", bench_opt.d_a, "attention channels");
  bench->add_option("--d-o", bench_opt.d_o, "output channels");
  bench->add_option("--heads", bench_opt.heads, "attention heads");
  bench->add_option("--scales", bench_opt.scales, "msac scale count");
  bench->add_option("--out", bench_out, "write the CSV here as well");

  auto* train = app.add_subcommand("train", "run a toy training task");
  train->fallthrough();
  std::string train_task, train_config, train_out = "train_out";
  train->add_option("task", train_task, "lm | similarity")->required();
  train->add_option("--config", train_config, "JSON config path")->required();
  train->add_option("--out", train_out, "output directory");

  auto* tensor = app.add_subcommand("tensor", "MST1 tensor file utilities");
  tensor->fallthrough();
  tensor->require_subcommand(1);
  auto* tinfo = tensor->add_subcommand("info", "print shape and basic statistics");
  tinfo->fallthrough();
  std::string tinfo_path;
  tinfo->add_option("file", tinfo_path, "MST1 file")->required();
  auto* tdump = tensor->add_subcommand("dump", "print every value");
  tdump->fallthrough();
  std::string tdump_path;
  tdump->add_option("file", tdump_path, "MST1 file")->required();
  auto* trandom = tensor->add_subcommand("random", "write a seeded random tensor");
  trandom->fallthrough();
  std::string trandom_path;
  std::vector<std::size_t> trandom_shape;
  double trandom_lo = -1.0, trandom_hi = 1.0;
  trandom->add_option("file", trandom_path, "output MST1 file")->required();
  trandom->add_option("--shape", trandom_shape, "dimensions")->delimiter(',');
  trandom->add_option("--lo", trandom_lo, "lower bound");
  trandom->add_option("--hi", trandom_hi, "upper bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  bench_opt.seed = seed;

  try {
    if (*verify) return cmd_verify(verify_suite, verify_trials, seed, verify_out);
    if (*gradcheck)
      return cmd_gradcheck(gradcheck_op, gradcheck_trials, gradcheck_eps, gradcheck_tol, seed,
                           gradcheck_out);
    if (*bench) return cmd_bench(bench_op, bench_opt, bench_out);
    if (*train) return cmd_train(train_task, train_config, train_out);
    if (*tensor) {
      if (*tinfo) return cmd_tensor_info(tinfo_path);
      if (*tdump) return cmd_tensor_dump(tdump_path);
      if (*trandom) return cmd_tensor_random(trandom_path, trandom_shape, seed, trandom_lo, trandom_hi);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
