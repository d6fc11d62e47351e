// nvmeguard command-line front end. Exit codes: 0 success, 1 usage error,
// 2 data error.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "nvmeguard/baselines.hpp"
#include "nvmeguard/derived.hpp"
#include "nvmeguard/eval.hpp"
#include "nvmeguard/hw_cost.hpp"
#include "nvmeguard/kv_file.hpp"
#include "nvmeguard/log.hpp"
#include "nvmeguard/pipeline.hpp"
#include "nvmeguard/synth.hpp"
#include "nvmeguard/trace.hpp"

namespace fs = std::filesystem;
using namespace nvmeguard;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SliceOpts {
  std::string mode = "command";
  std::size_t commands = 1000;
  std::uint64_t bytes = kDefaultSliceBytes;
  double seconds = 30.0;

  [[nodiscard]] SliceBudget budget() const {
    SliceBudget b;
    b.mode = parse_slice_mode(mode);
    b.commands = commands;
    b.bytes = bytes;
    b.seconds = seconds;
    return b;
  }
};

void add_slice_options(CLI::App* app, SliceOpts& o) {
  app->add_option("--slice-mode", o.mode, "command, volume or time")
      ->check(CLI::IsMember({"command", "volume", "time"}))
      ->capture_default_str();
  app->add_option("--slice-commands", o.commands, "commands per slice")->capture_default_str();
  app->add_option("--slice-bytes", o.bytes, "bytes per slice")->capture_default_str();
  app->add_option("--slice-seconds", o.seconds, "seconds per slice")->capture_default_str();
}

struct ModelOpts {
  std::string preset = "desk";
  std::optional<std::uint32_t> epochs, batch, lr_step, embed_dim, ff_dim, heads, layers;
  std::optional<double> lr, lr_gamma, dropout;
  std::size_t frame = kDefaultFrameCommands;
  bool single_token = false;
  std::string drop;
  std::optional<unsigned> msb_width;
  std::size_t window = 20;
  std::size_t stride = 10;
  std::uint64_t window_bytes = 50ull << 20;
  std::size_t trees = 20;
  std::size_t depth = 20;
};

void add_model_options(CLI::App* app, ModelOpts& o) {
  app->add_option("--preset", o.preset, "desk or full-scale hyperparameters")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();
  app->add_option("--epochs", o.epochs);
  app->add_option("--batch", o.batch);
  app->add_option("--lr", o.lr);
  app->add_option("--lr-step", o.lr_step, "epochs per learning-rate step (0 = off)");
  app->add_option("--lr-gamma", o.lr_gamma);
  app->add_option("--embed-dim", o.embed_dim);
  app->add_option("--ff-dim", o.ff_dim);
  app->add_option("--heads", o.heads);
  app->add_option("--layers", o.layers);
  app->add_option("--dropout", o.dropout);
  app->add_option("--frame", o.frame, "CLT frame length in commands")->capture_default_str();
  app->add_flag("--single-token", o.single_token, "CLT: one 18-bit token per command");
  app->add_option("--drop", o.drop, "comma-separated feature groups to ablate");
  app->add_option("--offset-msb-width", o.msb_width, "CLT: bit width anchoring offset_msb");
  app->add_option("--window", o.window, "PLT patch window in commands")->capture_default_str();
  app->add_option("--stride", o.stride, "PLT patch stride in commands")->capture_default_str();
  app->add_option("--window-bytes", o.window_bytes, "PLT patch window for volume slices")
      ->capture_default_str();
  app->add_option("--trees", o.trees, "RF trees")->capture_default_str();
  app->add_option("--depth", o.depth, "RF max depth")->capture_default_str();
}

std::vector<fs::path> expand_traces(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".csv") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  if (out.empty()) throw UsageError("no input traces");
  return out;
}

std::vector<PreparedStream> load_prepared(const std::vector<std::string>& inputs,
                                          const SliceBudget& budget) {
  std::vector<PreparedStream> out;
  for (const auto& p : expand_traces(inputs)) out.push_back(prepare_stream(load_trace(p), budget));
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

// Writes to the file when a path is given, else stdout.
template <typename F>
void with_output(const std::string& path, F&& body) {
  if (path.empty()) {
    body(std::cout);
  } else {
    auto f = open_out(path);
    body(f);
  }
}

CltTokenizerConfig tokenizer_from(const ModelOpts& o) {
  CltTokenizerConfig c;
  c.frame_commands = o.frame;
  c.single_token = o.single_token;
  c.ablation = CltAblation::parse(o.drop);
  c.offset_msb_width = o.msb_width;
  return c;
}

PatchConfig patches_from(const ModelOpts& o, const SliceOpts& s) {
  PatchConfig c;
  c.mode = parse_slice_mode(s.mode);
  c.window_commands = o.window;
  c.stride_commands = o.stride;
  c.window_bytes = o.window_bytes;
  return c;
}

nn::TransformerConfig model_config(const std::string& kind, const ModelOpts& o) {
  const bool clt = kind == "clt";
  const bool full = o.preset == "full";
  auto c = clt ? (full ? nn::TransformerConfig::full_clt() : desk_clt_model())
               : (full ? nn::TransformerConfig::full_plt() : desk_plt_model());
  if (o.embed_dim) c.embed_dim = *o.embed_dim;
  if (o.ff_dim) c.ff_dim = *o.ff_dim;
  if (o.heads) c.heads = *o.heads;
  if (o.layers) c.layers = *o.layers;
  if (o.dropout) c.dropout = *o.dropout;
  if (clt) {
    const auto cfg = tokenizer_from(o);
    c.vocab_size = vocabulary_size(cfg);
    c.context_tokens = static_cast<std::uint32_t>(o.frame * (o.single_token ? 1 : 2));
  }
  c.validate();
  return c;
}

nn::TrainConfig train_config(const std::string& kind, const ModelOpts& o, std::uint64_t seed,
                             std::uint32_t threads) {
  const bool full = o.preset == "full";
  auto c = kind == "clt" ? (full ? nn::TrainConfig::full_clt() : desk_clt_training())
                         : (full ? nn::TrainConfig::full_plt() : desk_plt_training());
  if (o.epochs) c.epochs = *o.epochs;
  if (o.batch) c.batch_size = *o.batch;
  if (o.lr) c.learning_rate = *o.lr;
  if (o.lr_step) c.lr_step_epochs = *o.lr_step;
  if (o.lr_gamma) c.lr_gamma = *o.lr_gamma;
  c.seed = seed;
  c.threads = threads;
  return c;
}

fs::path meta_of(const fs::path& model) { return fs::path(model.string() + ".meta"); }

void save_model_meta(const fs::path& model, const std::string& kind, const SliceOpts& s,
                     const ModelOpts& o) {
  KeyValueFile kv;
  kv.set("kind", kind);
  kv.set("slice_mode", s.mode);
  kv.set("slice_commands", std::to_string(s.commands));
  kv.set("slice_bytes", std::to_string(s.bytes));
  kv.set("slice_seconds", format_seconds(s.seconds));
  kv.set("frame", std::to_string(o.frame));
  kv.set("single_token", o.single_token ? "1" : "0");
  kv.set("drop", o.drop);
  if (o.msb_width) kv.set("offset_msb_width", std::to_string(*o.msb_width));
  kv.set("window", std::to_string(o.window));
  kv.set("stride", std::to_string(o.stride));
  kv.set("window_bytes", std::to_string(o.window_bytes));
  kv.save(meta_of(model));
}

std::string load_model_meta(const fs::path& model, SliceOpts& s, ModelOpts& o) {
  const auto kv = KeyValueFile::load(meta_of(model));
  s.mode = kv.get_or("slice_mode", s.mode);
  s.commands = kv.get_u64("slice_commands", s.commands);
  s.bytes = kv.get_u64("slice_bytes", s.bytes);
  s.seconds = kv.get_double("slice_seconds", s.seconds);
  o.frame = kv.get_u64("frame", o.frame);
  o.single_token = kv.get_or("single_token", "0") == "1";
  o.drop = kv.get_or("drop", "");
  if (kv.contains("offset_msb_width")) {
    o.msb_width = static_cast<unsigned>(kv.get_u64("offset_msb_width", 0));
  }
  o.window = kv.get_u64("window", o.window);
  o.stride = kv.get_u64("stride", o.stride);
  o.window_bytes = kv.get_u64("window_bytes", o.window_bytes);
  const auto kind = kv.get_or("kind", "");
  if (kind.empty()) throw std::runtime_error("model metadata has no kind");
  return kind;
}

nn::EpochCallback epoch_logger(const std::string& kind) {
  return [kind](std::uint32_t epoch, double loss) {
    std::ostringstream s;
    s << kind << " epoch " << epoch + 1 << " loss " << loss;
    log_info(s.str());
  };
}

// Trains a model of the given kind and returns slice predictions on `test`.
std::vector<SlicePrediction> train_and_predict(const std::string& kind,
                                               std::span<const PreparedStream> train,
                                               std::span<const PreparedStream> test,
                                               const ModelOpts& o, const SliceOpts& s,
                                               std::uint64_t seed, std::uint32_t threads) {
  if (kind == "clt") {
    const auto tok = tokenizer_from(o);
    const auto samples = clt_training_set(train, tok);
    auto ckpt = nn::train_clt(model_config(kind, o), samples, train_config(kind, o, seed, threads),
                              epoch_logger(kind));
    return predict_clt(ckpt.model, test, tok);
  }
  const auto pc = patches_from(o, s);
  const auto ab = PltAblation::parse(o.drop);
  const auto samples = plt_training_set(train, pc, ab);
  auto ckpt = nn::train_plt(model_config(kind, o), samples, train_config(kind, o, seed, threads),
                            epoch_logger(kind));
  return predict_plt(ckpt.model, test, pc, ab);
}

void print_cost(const std::string& kind, const nn::TransformerConfig& c,
                const DeploymentParams& dp, std::optional<std::uint64_t> length,
                const std::string& csv_path) {
  const auto n = length.value_or(c.context_tokens);
  const auto r = model_cost(c, dp, n);
  std::vector<std::pair<std::string, std::string>> rows;
  auto add = [&](const std::string& name, auto value) {
    std::ostringstream v;
    v << value;
    rows.emplace_back(name, v.str());
  };
  for (const auto& t : parameter_terms(c)) add("params." + t.name, t.count);
  for (const auto& t : multiplication_terms(c, n)) add("mults." + t.name, t.count);
  add("parameters", r.parameters);
  add("multiplications", r.multiplications);
  add("input_length", n);
  add("dram_bytes", r.dram_bytes);
  add("latency_ms", r.latency_s * 1e3);
  add("throughput_gbps", r.throughput_bytes_per_s / 1e9);
  add("iops", r.iops);
  add("gates", r.gates);

  std::size_t width = 0;
  for (const auto& [name, v] : rows) width = std::max(width, name.size());
  std::cout << "model: " << kind << "\n";
  for (const auto& [name, v] : rows) {
    std::cout << std::left << std::setw(static_cast<int>(width + 2)) << name << v << "\n";
  }
  if (c.head == nn::HeadKind::Plt) {
    // The prose figure of about 20M parameters (40MB) disagrees with the itemized sum.
    std::cout << "note: itemized count used; the rounder 20M-parameter figure is not reproduced\n";
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw UsageError("cannot write " + csv_path);
    out << "name,value\n";
    for (const auto& [name, v] : rows) out << name << ',' << v << "\n";
  }
}

void write_report(const MetricsReport& report, const std::string& format, std::ostream& out) {
  if (format == "json") {
    out << metrics_json(report) << "\n";
  } else {
    write_metrics_csv(report, out);
  }
}

// Single-valued options keep the last occurrence instead of rejecting repeats.
void take_last_for_scalars(CLI::App& app) {
  for (auto* opt : app.get_options()) {
    if (opt->get_items_expected_max() == 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
  for (auto* sub : app.get_subcommands({})) take_last_for_scalars(*sub);
}

std::optional<std::string> find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  nvmeguard::nn::tune_allocator();
  CLI::App app{"nvmeguard: ransomware detection on NVMe command traces"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 1;
  std::uint32_t threads = 1;
  std::string log_level = "info";
  app.add_option("--seed", seed, "master random seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads")->capture_default_str();
  app.add_option("--log-level", log_level)
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "off"}))
      ->capture_default_str();
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; its entries override flags");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic trace or the desk-bench suite");
  std::string spec_path, synth_kind, synth_out;
  bool desk_bench = false;
  synth->add_option("--spec", spec_path, "workload spec (key=value)");
  synth->add_option("--kind", synth_kind, "benign or ransomware (overrides the spec's kind)")
      ->check(CLI::IsMember({"benign", "ransomware"}));
  synth->add_flag("--desk-bench", desk_bench,
                  "write the fixed desk-bench suite into --out/train and --out/test");
  synth->add_option("--out", synth_out, "trace path, or directory with --desk-bench")->required();

  // annotate
  auto* annotate = app.add_subcommand("annotate", "per-command overlap and time-lapse attributes");
  std::string ann_in, ann_out;
  annotate->add_option("--trace", ann_in)->required();
  annotate->add_option("--out", ann_out)->required();

  // slice
  auto* slice = app.add_subcommand("slice", "partition a trace into slices");
  std::string slice_in, slice_out;
  SliceOpts slice_opts;
  slice->add_option("--trace", slice_in)->required();
  slice->add_option("--out", slice_out, "summary CSV (default stdout)");
  add_slice_options(slice, slice_opts);

  // tokenize
  auto* tokenize = app.add_subcommand("tokenize", "CLT token frames");
  std::string tok_in, tok_out;
  SliceOpts tok_slice;
  ModelOpts tok_model;
  tokenize->add_option("--trace", tok_in)->required();
  tokenize->add_option("--out", tok_out, "CSV (default stdout)");
  add_slice_options(tokenize, tok_slice);
  tokenize->add_option("--frame", tok_model.frame)->capture_default_str();
  tokenize->add_flag("--single-token", tok_model.single_token);
  tokenize->add_option("--drop", tok_model.drop, "offset,dt,opcode,size,ov,index");
  tokenize->add_option("--offset-msb-width", tok_model.msb_width, "bit width anchoring offset_msb");
  bool tok_labels = false;
  tokenize->add_flag("--with-labels", tok_labels, "CSV with stream, slice, frame and labels");

  // embed
  auto* embed = app.add_subcommand("embed", "PLT patch embeddings");
  std::string emb_in, emb_out;
  SliceOpts emb_slice;
  ModelOpts emb_model;
  embed->add_option("--trace", emb_in)->required();
  embed->add_option("--out", emb_out, "dump CSV (default stdout)");
  add_slice_options(embed, emb_slice);
  embed->add_option("--window", emb_model.window)->capture_default_str();
  embed->add_option("--stride", emb_model.stride)->capture_default_str();
  embed->add_option("--window-bytes", emb_model.window_bytes)->capture_default_str();
  embed->add_option("--drop", emb_model.drop, "size,dt,fractions,lapse,offset,ov");

  // train
  auto* train = app.add_subcommand("train", "train a detector");
  std::string train_kind, train_out, resume;
  std::vector<std::string> train_in;
  SliceOpts train_slice;
  ModelOpts train_model;
  train->add_option("--model", train_kind)
      ->required()
      ->check(CLI::IsMember({"clt", "plt", "rf", "deftpunk"}));
  train->add_option("--trace", train_in, "trace files or directories")->required();
  train->add_option("--out", train_out, "model file")->required();
  train->add_option("--resume", resume, "continue from a CLT/PLT checkpoint");
  add_slice_options(train, train_slice);
  add_model_options(train, train_model);

  // predict
  auto* predict = app.add_subcommand("predict", "slice-level predictions");
  std::string pred_model, pred_out;
  std::vector<std::string> pred_in;
  predict->add_option("--model-file", pred_model)->required();
  predict->add_option("--trace", pred_in)->required();
  predict->add_option("--out", pred_out, "predictions CSV (default stdout)");

  // eval
  auto* eval = app.add_subcommand("eval", "metrics with calibration and repeated splits");
  std::string eval_in, eval_out, eval_cdf, eval_format = "csv";
  CrossValidationConfig cv;
  eval->add_option("--predictions", eval_in)->required();
  eval->add_option("--out", eval_out, "report (default stdout)");
  eval->add_option("--cdf", eval_cdf, "MBD CDF CSV");
  eval->add_option("--format", eval_format)->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  eval->add_option("--repeats", cv.repeats)->capture_default_str();
  eval->add_option("--quantile", cv.quantile)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  eval->add_option("--gb-per-alarm", cv.gb_per_alarm)->capture_default_str();
  eval->add_flag("--calibrate-on-partial", cv.calibrate_on_partial,
                 "include trailing partial slices when calibrating");

  // hwcost
  auto* hwcost = app.add_subcommand("hwcost", "parameter, multiplication and throughput estimates");
  std::string hw_kind;
  DeploymentParams dp;
  std::optional<std::uint64_t> hw_length;
  hwcost->add_option("--model", hw_kind)->required()->check(CLI::IsMember({"clt", "plt"}));
  hwcost->add_option("--multipliers", dp.multipliers)->capture_default_str();
  hwcost->add_option("--clock,--clock-hz", dp.clock_hz)->capture_default_str();
  std::string hw_csv;
  hwcost->add_option("--csv", hw_csv, "also write the report as name,value CSV");
  hwcost->add_option("--input-length", hw_length, "tokens per pass (default: full context)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "feature-drop and context-length sweeps");
  std::string abl_kind, abl_out;
  std::vector<std::string> abl_train, abl_test, abl_drops;
  std::vector<std::size_t> abl_contexts;
  SliceOpts abl_slice;
  ModelOpts abl_model;
  CrossValidationConfig abl_cv;
  ablate->add_option("--model", abl_kind)->required()->check(CLI::IsMember({"clt", "plt"}));
  ablate->add_option("--train", abl_train, "training traces")->required();
  ablate->add_option("--test", abl_test, "evaluation traces")->required();
  ablate->add_option("--drops", abl_drops, "feature groups to drop, one run each ('none' = all)");
  ablate->add_option("--context,--contexts", abl_contexts, "CLT frame lengths to sweep");
  ablate->add_option("--out", abl_out, "summary CSV (default stdout)");
  ablate->add_option("--repeats", abl_cv.repeats)->capture_default_str();
  add_slice_options(ablate, abl_slice);
  add_model_options(ablate, abl_model);

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    // Config entries are appended after the user's arguments, so with
    // take-last semantics they win over the same flag on the command line.
    take_last_for_scalars(app);
    std::vector<std::string> args(argv + 1, argv + argc);
    if (const auto path = find_config_path(args)) {
      const auto kv = KeyValueFile::load(*path);
      for (const auto& [key, value] : kv.entries()) {
        args.push_back("--" + key + "=" + value);
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  static const std::map<std::string, LogLevel> levels = {{"debug", LogLevel::Debug},
                                                         {"info", LogLevel::Info},
                                                         {"warning", LogLevel::Warning},
                                                         {"error", LogLevel::Error},
                                                         {"off", LogLevel::Off}};
  set_log_level(levels.at(log_level));
  {
    std::ostringstream cfg;
    cfg << "config: seed=" << seed << " threads=" << threads;
    if (!config_path.empty()) cfg << " config_file=" << config_path;
    for (const auto* sub : app.get_subcommands()) {
      cfg << " subcommand=" << sub->get_name() << "\n" << sub->config_to_str(true, false);
    }
    log_info(cfg.str());
  }

  try {
    if (synth->parsed()) {
      if (desk_bench) {
        DeskBenchConfig cfg;
        if (app.count("--seed")) cfg.seed = seed;
        for (const char* half : {"train", "test"}) fs::create_directories(fs::path(synth_out) / half);
        for (const auto& s : desk_bench_suite(cfg)) {
          const auto dir = fs::path(synth_out) / (s.held_out ? "test" : "train");
          serialize_trace(s.stream, dir / (s.stream.stream_id + ".csv"));
        }
        return 0;
      }
      KeyValueFile kv;
      if (!spec_path.empty()) kv = KeyValueFile::load(spec_path);
      std::string kind = synth_kind.empty() ? kv.get_or("kind", "benign") : synth_kind;
      if (kind != "benign" && kind != "ransomware") throw UsageError("unknown kind " + kind);
      auto spec = WorkloadSpec::from_kv(kv);
      if (app.count("--seed")) spec.seed = seed;
      const auto stream = kind == "benign" ? generate_benign(spec) : generate_ransomware(spec);
      serialize_trace(stream, synth_out);
      return 0;
    }
    if (annotate->parsed()) {
      const auto stream = load_trace(ann_in);
      write_annotated_csv(annotate_stream(stream), ann_out);
      return 0;
    }
    if (slice->parsed()) {
      const auto p = prepare_stream(load_trace(slice_in), slice_opts.budget());
      with_output(slice_out, [&](std::ostream& out) {
        out << "stream_id,slice_index,commands,bytes,partial,ransomware\n";
        for (const auto& s : p.slices) {
          out << s.stream_id << ',' << s.slice_index << ',' << s.commands.size() << ','
              << s.volume() << ',' << (s.partial ? 1 : 0) << ',' << (s.has_ransomware() ? 1 : 0)
              << '\n';
        }
      });
      return 0;
    }
    if (tokenize->parsed()) {
      const auto p = prepare_stream(load_trace(tok_in), tok_slice.budget());
      const auto cfg = tokenizer_from(tok_model);
      with_output(tok_out, [&](std::ostream& out) {
        if (tok_labels) out << "stream_id,slice_index,frame_index,tokens,labels\n";
        for (const auto& s : p.slices) {
          const auto frames = tokenize_frames(s, p.capacity, cfg);
          for (std::size_t f = 0; f < frames.size(); ++f) {
            if (tok_labels) out << s.stream_id << ',' << s.slice_index << ',' << f << ',';
            for (std::size_t i = 0; i < frames[f].tokens.size(); ++i) {
              out << (i ? " " : "") << frames[f].tokens[i];
            }
            if (tok_labels) {
              out << ',';
              for (auto l : frames[f].labels) out << static_cast<int>(l);
            }
            out << '\n';
          }
        }
      });
      return 0;
    }
    if (embed->parsed()) {
      const auto p = prepare_stream(load_trace(emb_in), emb_slice.budget());
      const auto embedded =
          embed_stream(p, patches_from(emb_model, emb_slice), PltAblation::parse(emb_model.drop));
      std::vector<PatchEmbedding> all;
      for (const auto& e : embedded) all.insert(all.end(), e.begin(), e.end());
      with_output(emb_out, [&](std::ostream& out) { write_embedding_dump(all, out); });
      return 0;
    }
    if (train->parsed()) {
      const auto streams = load_prepared(train_in, train_slice.budget());
      if (train_kind == "rf" || train_kind == "deftpunk") {
        TreeEnsembleConfig tc;
        tc.seed = seed;
        tc.rf_trees = train_model.trees;
        tc.rf_max_depth = train_model.depth;
        if (train_kind == "rf") {
          const auto d = rf_dataset(streams);
          save_random_forest(RandomForest::train(d.x, d.y, tc), train_out);
        } else {
          const auto d = deftpunk_dataset(streams);
          save_deftpunk(DeftPunk::train(d.x, d.y, tc), train_out);
        }
      } else {
        const auto tcfg = train_config(train_kind, train_model, seed, threads);
        std::optional<nn::Checkpoint> ckpt;
        if (!resume.empty()) ckpt.emplace(nn::load_checkpoint(resume));
        if (train_kind == "clt") {
          const auto samples = clt_training_set(streams, tokenizer_from(train_model));
          if (ckpt) {
            nn::continue_clt(*ckpt, samples, tcfg, epoch_logger("clt"));
          } else {
            ckpt.emplace(nn::train_clt(model_config("clt", train_model), samples, tcfg,
                                       epoch_logger("clt")));
          }
        } else {
          const auto samples = plt_training_set(streams, patches_from(train_model, train_slice),
                                          PltAblation::parse(train_model.drop));
          if (ckpt) {
            nn::continue_plt(*ckpt, samples, tcfg, epoch_logger("plt"));
          } else {
            ckpt.emplace(nn::train_plt(model_config("plt", train_model), samples, tcfg,
                                       epoch_logger("plt")));
          }
        }
        nn::save_checkpoint(*ckpt, train_out);
      }
      save_model_meta(train_out, train_kind, train_slice, train_model);
      return 0;
    }
    if (predict->parsed()) {
      SliceOpts s;
      ModelOpts o;
      const auto kind = load_model_meta(pred_model, s, o);
      const auto streams = load_prepared(pred_in, s.budget());
      std::vector<SlicePrediction> preds;
      if (kind == "rf") {
        preds = predict_rf(load_random_forest(pred_model), streams);
      } else if (kind == "deftpunk") {
        preds = predict_deftpunk(load_deftpunk(pred_model), streams);
      } else if (kind == "clt") {
        preds = predict_clt(nn::load_checkpoint(pred_model).model, streams, tokenizer_from(o));
      } else if (kind == "plt") {
        preds = predict_plt(nn::load_checkpoint(pred_model).model, streams, patches_from(o, s),
                            PltAblation::parse(o.drop));
      } else {
        throw std::runtime_error("unknown model kind " + kind);
      }
      with_output(pred_out, [&](std::ostream& out) { write_predictions_csv(preds, out); });
      return 0;
    }
    if (eval->parsed()) {
      cv.seed = seed;
      cv.threads = threads;
      const auto preds = read_predictions_csv(eval_in);
      const auto report = cross_validate(preds, cv);
      with_output(eval_out, [&](std::ostream& out) { write_report(report, eval_format, out); });
      if (!eval_cdf.empty()) {
        auto f = open_out(eval_cdf);
        write_mbd_cdf_csv(report.mbd_samples, f);
      }
      return 0;
    }
    if (hwcost->parsed()) {
      const auto c = hw_kind == "clt" ? nn::TransformerConfig::full_clt()
                                      : nn::TransformerConfig::full_plt();
      print_cost(hw_kind, c, dp, hw_length, hw_csv);
      return 0;
    }
    if (ablate->parsed()) {
      const auto budget = abl_slice.budget();
      const auto train_streams = load_prepared(abl_train, budget);
      const auto test_streams = load_prepared(abl_test, budget);
      abl_cv.seed = seed;
      abl_cv.threads = threads;
      struct Run {
        std::string label;
        ModelOpts opts;
      };
      std::vector<Run> runs;
      if (abl_drops.empty() && abl_contexts.empty()) abl_drops.push_back("none");
      for (const auto& d : abl_drops) {
        Run r{"drop=" + d, abl_model};
        r.opts.drop = d == "none" ? "" : d;
        runs.push_back(r);
      }
      if (!abl_contexts.empty() && abl_kind != "clt") {
        throw UsageError("--contexts applies to the CLT only");
      }
      for (auto ctx : abl_contexts) {
        Run r{"context=" + std::to_string(ctx), abl_model};
        r.opts.frame = ctx;
        runs.push_back(r);
      }
      with_output(abl_out, [&](std::ostream& out) {
        out << "run,MDR_percent,FAR_percent,F1_percent,P_miss_percent,MBD_q_MB\n";
        for (const auto& r : runs) {
          const auto preds = train_and_predict(abl_kind, train_streams, test_streams, r.opts,
                                               abl_slice, seed, threads);
          const auto rep = cross_validate(preds, abl_cv);
          auto pct = [](const MetricSummary& m) {
            return m.mean ? std::to_string(*m.mean * 100.0) : std::string();
          };
          out << r.label << ',' << pct(rep.mdr) << ',' << pct(rep.far) << ',' << pct(rep.f1)
              << ',' << pct(rep.p_miss) << ','
              << (rep.mbd_q.mean ? std::to_string(*rep.mbd_q.mean) : std::string()) << '\n';
          out.flush();
        }
      });
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const TraceError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
