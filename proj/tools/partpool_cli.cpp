// partpool command-line entry point.
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 I/O error,
// 4 checkpoint/config mismatch, 5 gradient check failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "partpool/config.hpp"
#include "partpool/demo.hpp"
#include "partpool/gradcheck.hpp"
#include "partpool/model.hpp"
#include "partpool/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace partpool;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kMismatch = 4, kGradFail = 5 };

struct Options {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<uint64_t> seed;
  std::string lambda_def;
  std::string refine;
  std::string checkpoint;
  std::string dump;
  std::string inject_fault;
  bool json_lines = false;
};

class Output {
 public:
  explicit Output(bool json_lines) : json_lines_(json_lines) {}

  // One record per line in json mode, otherwise the human text.
  void emit(const json& record, const std::string& text) const {
    if (json_lines_)
      std::cout << record.dump() << "\n";
    else
      std::cout << text << "\n";
    std::cout.flush();
  }

 private:
  bool json_lines_;
};

Config resolve_config(const Options& o) {
  Config c = o.config_path.empty() ? Config{} : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (!o.lambda_def.empty()) c.lambda_def = parse_lambda(o.lambda_def);
  if (!o.refine.empty()) {
    if (o.refine == "on")
      c.refine = true;
    else if (o.refine == "off")
      c.refine = false;
    else
      throw ConfigInvalid("--refine must be 'on' or 'off'");
  }
  validate(c);
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

// Writes through a temp file so a crash never leaves a half-written file.
void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write '" + tmp + "'");
    os << text;
    if (!os) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename to '" + path + "'");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json report_record(const EvalReport& r) {
  return {{"event", "eval"}, {"map50", r.map50}, {"map75", r.map75}, {"map50_95", r.map50_95}};
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "mAP@0.5 " << r.map50 << "  mAP@0.75 " << r.map75 << "  mAP@[.5:.95] " << r.map50_95;
  return os.str();
}

void write_eval_outputs(const EvalResult& eval, const std::string& dir) {
  write_text((fs::path(dir) / "eval_report.json").string(), to_json(eval.report) + "\n");
  std::string lines;
  for (const Detection& d : eval.detections) lines += to_json_line(d) + "\n";
  write_text((fs::path(dir) / "detections.jsonl").string(), lines);
}

int run_train(const Options& o, const Output& out) {
  const Config config = resolve_config(o);
  ensure_dir(o.out_dir);
  const int every = std::max(1, config.train.iterations / 20);
  const TrainResult trained = train(config, [&](int it, double loss) {
    if (it % every == 0 || it + 1 == config.train.iterations)
      out.emit({{"event", "iteration"}, {"iteration", it}, {"loss", loss}},
               "iter " + std::to_string(it) + " loss " + format_double(loss));
  });
  save_checkpoint(trained.model, (fs::path(o.out_dir) / "checkpoint.bin").string());
  std::string trace;
  for (double l : trained.loss_trace) trace += format_double(l) + "\n";
  write_text((fs::path(o.out_dir) / "loss_trace.txt").string(), trace);
  write_text((fs::path(o.out_dir) / "config.json").string(), to_json(config) + "\n");
  const EvalResult eval = evaluate(trained.model, config);
  write_eval_outputs(eval, o.out_dir);
  out.emit(report_record(eval.report), report_text(eval.report));
  return kOk;
}

Model model_for(const Options& o, const Config& config) {
  Model model = initial_model(config);
  if (!o.checkpoint.empty()) load_checkpoint(model, o.checkpoint);
  return model;
}

int run_eval(const Options& o, const Output& out) {
  const Config config = resolve_config(o);
  if (o.checkpoint.empty()) throw ConfigInvalid("eval needs --checkpoint");
  const Model model = model_for(o, config);
  const EvalResult eval = evaluate(model, config);
  ensure_dir(o.out_dir);
  write_eval_outputs(eval, o.out_dir);
  out.emit(report_record(eval.report), report_text(eval.report));
  return kOk;
}

int run_pool_demo(const Options& o, const Output& out) {
  const Config config = resolve_config(o);
  const Model model = model_for(o, config);
  const PoolDemo demo = pool_demo(model, config);
  ensure_dir(o.out_dir);
  std::string lines;
  for (const DeformationRecord& r : demo.records) lines += to_json_line(r) + "\n";
  const std::string dump = (fs::path(o.out_dir) / "deformations.jsonl").string();
  const std::string ppm = (fs::path(o.out_dir) / "overlay.ppm").string();
  write_text(dump, lines);
  write_ppm(demo.overlay, ppm);
  out.emit({{"event", "pool-demo"}, {"regions", demo.regions.size()}, {"records", demo.records.size()},
            {"dump", dump}, {"overlay", ppm}},
           "pooled " + std::to_string(demo.regions.size()) + " regions; wrote " + dump + " and " + ppm);
  return kOk;
}

int run_grad_check(const Options& o, const Output& out) {
  GradCheckOptions g;
  if (!o.config_path.empty() || o.seed) g.seed = resolve_config(o).seed;
  g.inject_fault = o.inject_fault;
  if (!g.inject_fault.empty()) {
    const auto& names = gradient_operator_names();
    if (std::find(names.begin(), names.end(), g.inject_fault) == names.end())
      throw ConfigInvalid("--inject-fault: unknown operator '" + g.inject_fault + "'");
  }
  const auto results = run_gradient_suite(g);
  std::string failed;
  for (const GradCheckResult& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s max_rel_error %.3e  points %d  skipped %d  %s", r.op.c_str(),
                  r.max_rel_error, r.points, r.skipped, r.passed ? "ok" : "FAIL");
    out.emit({{"event", "grad-check"}, {"op", r.op}, {"max_rel_error", r.max_rel_error},
              {"points", r.points}, {"skipped", r.skipped}, {"passed", r.passed}},
             buf);
    if (!r.passed) failed += (failed.empty() ? "" : ", ") + r.op;
  }
  if (!failed.empty()) {
    std::cerr << "gradient check failed: " << failed << "\n";
    return kGradFail;
  }
  return kOk;
}

int run_inspect(const Options& o, const Output& out) {
  const Config config = resolve_config(o);
  if (!o.dump.empty()) {
    std::ifstream is(o.dump);
    if (!is) throw IoError("cannot read '" + o.dump + "'");
    std::map<int, std::pair<int, double>> per_class;  // records, mean |d| accumulator
    std::string line;
    int records = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const DeformationRecord r = parse_deformation_record(line);
      double sum = 0.0;
      for (double v : r.displacements) sum += std::abs(v);
      auto& slot = per_class[r.cls];
      slot.first += 1;
      slot.second += r.displacements.empty() ? 0.0 : sum / r.displacements.size();
      ++records;
    }
    for (const auto& [cls, s] : per_class) {
      const double mean = s.second / s.first;
      out.emit({{"event", "inspect"}, {"class", cls}, {"records", s.first}, {"mean_abs_displacement", mean}},
               "class " + std::to_string(cls) + ": " + std::to_string(s.first) +
                   " records, mean |normalized displacement| " + format_double(mean));
    }
    if (records == 0) out.emit({{"event", "inspect"}, {"records", 0}}, "no records");
    return kOk;
  }
  Model model = model_for(o, config);
  for (const Model::ParamRef& p : model.parameters()) {
    double sum2 = 0.0;
    for (double v : p.values) sum2 += v * v;
    const double rms = p.values.empty() ? 0.0 : std::sqrt(sum2 / p.values.size());
    out.emit({{"event", "inspect"}, {"param", p.name}, {"size", p.values.size()}, {"rms", rms}},
             p.name + ": " + std::to_string(p.values.size()) + " values, rms " + format_double(rms));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable part-based RoI pooling: train, evaluate and inspect"};
  app.require_subcommand(1);
  Options o;
  std::string seed_text;
  app.add_option("--config", o.config_path, "JSON config file");
  app.add_option("--out", o.out_dir, "Output directory");
  app.add_option("--seed", seed_text, "Override the config seed");
  app.add_option("--lambda-def", o.lambda_def, "Deformation cost weight, or 'inf' for position-sensitive pooling");
  app.add_option("--refine", o.refine, "Localization refinement: on|off");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint to load");
  app.add_flag("--json-lines", o.json_lines, "One JSON record per stdout line");
  app.fallthrough();

  auto* train_cmd = app.add_subcommand("train", "Train, then evaluate; writes checkpoint, loss trace and report");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* demo_cmd = app.add_subcommand("pool-demo", "Dump deformations and an overlay for one scene");
  auto* grad_cmd = app.add_subcommand("grad-check", "Compare every backward with finite differences");
  grad_cmd->add_option("--inject-fault", o.inject_fault, "Corrupt one operator's gradient (negative control)");
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize parameters or a deformation dump");
  inspect_cmd->add_option("--dump", o.dump, "Deformation dump (JSONL) to summarize");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const Output out(o.json_lines);
  try {
    if (!seed_text.empty()) {
      size_t used = 0;
      try {
        o.seed = std::stoull(seed_text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != seed_text.size() || seed_text[0] == '-') throw ConfigInvalid("--seed must be a non-negative integer");
    }
    if (*train_cmd) return run_train(o, out);
    if (*eval_cmd) return run_eval(o, out);
    if (*demo_cmd) return run_pool_demo(o, out);
    if (*grad_cmd) return run_grad_check(o, out);
    if (*inspect_cmd) return run_inspect(o, out);
  } catch (const ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ShapeMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
