#include "cli.hpp"

#include "neuform/audio_io.hpp"
#include "neuform/error.hpp"
#include "neuform/eval.hpp"
#include "neuform/parallel.hpp"
#include "neuform/pipeline.hpp"
#include "neuform/run_config.hpp"
#include "neuform/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>

namespace fs = std::filesystem;

namespace neuform::cli {
namespace {

constexpr const char* kEchoedConfig = "neuform_config.json";

struct Context {
  std::ostream& out;
  std::ostream& err;
};

struct CommonOptions {
  std::string config;
  int jobs = 1;
};

RunConfig base_config(const CommonOptions& common, const nlohmann::json& overrides) {
  RunConfig cfg = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  if (!overrides.is_null() && !overrides.empty()) cfg = apply_config_patch(cfg, overrides);
  return cfg;
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  const fs::path target = dir.empty() ? fs::path(".") : dir;
  fs::create_directories(target);
  save_run_config(target / kEchoedConfig, cfg);
}

fs::path parent_dir(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

Waveform load_audio(const fs::path& path, int sample_rate) {
  Waveform w = read_wav(path);
  return w.sample_rate == sample_rate ? w : resample(w, sample_rate);
}

AnalysisConfig analysis_for(const RunConfig& cfg, const std::optional<std::string>& preset) {
  AnalysisConfig a = cfg.analysis;
  if (preset && *preset != "auto") a.preset = voice_preset_by_name(*preset);
  return a;
}

/// Analysis settings for a trained model: frame and mel settings come from the
/// checkpoint. An explicit config must agree with them.
AnalysisConfig analysis_for_model(const MapperModel<float>& model, const RunConfig& cfg, bool explicit_config,
                                  const std::optional<std::string>& preset) {
  const FeatureSettings want = cfg.features();
  const FeatureSettings& have = model.features;
  if (explicit_config && !(want == have)) {
    throw usage_error("checkpoint was trained at " + std::to_string(have.sample_rate) + " Hz, win " +
                      std::to_string(have.win_length) + ", hop " + std::to_string(have.hop_length) + ", " +
                      std::to_string(have.n_mels) + " mels; the config asks for " +
                      std::to_string(want.sample_rate) + " Hz, win " + std::to_string(want.win_length) +
                      ", hop " + std::to_string(want.hop_length) + ", " + std::to_string(want.n_mels) +
                      " mels");
  }
  AnalysisConfig a = analysis_for(cfg, preset);
  a.sample_rate = have.sample_rate;
  a.win_length = have.win_length;
  a.hop_length = have.hop_length;
  a.n_mels = have.n_mels;
  a.mel_f_min = have.mel_f_min;
  a.mel_f_max = have.mel_f_max;
  return a;
}

std::vector<Analysis> analyze_entries(const std::vector<ManifestEntry>& entries, const AnalysisConfig& base,
                                      int jobs, Context& ctx) {
  std::vector<Analysis> out(entries.size());
  std::mutex log;
  std::size_t done = 0;
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    const ManifestEntry& e = entries[i];
    AnalysisConfig cfg = base;
    if (e.preset) cfg.preset = voice_preset_by_name(*e.preset);
    try {
      out[i] = analyze(load_audio(e.path, cfg.sample_rate), cfg);
    } catch (const Error& ex) {
      throw Error(ex.kind(), "utterance '" + e.id + "': " + ex.what());
    }
    std::lock_guard lock(log);
    if (++done % 50 == 0 || done == entries.size())
      ctx.err << "analyzed " << done << "/" << entries.size() << " utterances\n";
  });
  return out;
}

std::vector<ManifestEntry> require_split(const Manifest& m, Split s, const std::string& path) {
  auto entries = m.select(s);
  if (entries.empty())
    throw data_error("manifest '" + path + "' has no " + std::string(name(s)) + " utterances");
  return entries;
}

ReportFormat format_for(const std::string& requested, const fs::path& out) {
  if (requested == "csv") return ReportFormat::Csv;
  if (requested == "json") return ReportFormat::Json;
  return out.extension() == ".json" ? ReportFormat::Json : ReportFormat::Csv;
}

// analyze ---------------------------------------------------------------------

struct AnalyzeOptions {
  std::vector<std::string> inputs;
  std::string out_dir;
  std::string preset = "auto";
};

int cmd_analyze(const AnalyzeOptions& o, const CommonOptions& common, Context& ctx) {
  if (o.inputs.empty()) throw usage_error("analyze needs at least one audio file");
  const RunConfig cfg = base_config(common, {});
  const fs::path out_dir = o.out_dir.empty() ? cfg.output_dir : fs::path(o.out_dir);
  const AnalysisConfig acfg = analysis_for(cfg, o.preset);

  std::set<std::string> stems;
  for (const auto& in : o.inputs)
    if (!stems.insert(fs::path(in).stem().string()).second)
      throw usage_error("two inputs share the file name '" + fs::path(in).stem().string() + "'");

  fs::create_directories(out_dir);
  echo_config(out_dir, cfg);
  std::vector<std::optional<Error>> failures(o.inputs.size());
  parallel_for(o.inputs.size(), common.jobs, [&](std::size_t i) {
    const fs::path in(o.inputs[i]);
    try {
      const Analysis a = analyze(load_audio(in, acfg.sample_rate), acfg);
      write_params_csv(out_dir / (in.stem().string() + ".params.csv"), a.params);
      export_mel(out_dir / (in.stem().string() + ".nfmel"), a.mel);
    } catch (const Error& e) {
      failures[i] = e;
    }
  });

  int code = 0;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < failures.size(); ++i) {
    if (!failures[i]) continue;
    ++failed;
    ctx.err << "failed: " << o.inputs[i] << ": " << failures[i]->what() << '\n';
    code = std::max(code, failures[i]->exit_code());
  }
  ctx.out << "analyzed " << (o.inputs.size() - failed) << " of " << o.inputs.size() << " files into "
          << out_dir.string() << '\n';
  return code;
}

// train -------------------------------------------------------------------------

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::optional<int> updates, batch, seq_len, channels, checkpoint_every;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainOptions& o, const CommonOptions& common, Context& ctx) {
  nlohmann::json patch = nlohmann::json::object();
  if (o.updates) patch["train"]["max_updates"] = *o.updates;
  if (o.batch) patch["train"]["batch_size"] = *o.batch;
  if (o.seq_len) patch["train"]["seq_len"] = *o.seq_len;
  if (o.checkpoint_every) patch["train"]["checkpoint_every"] = *o.checkpoint_every;
  if (o.lr) patch["train"]["learning_rate"] = *o.lr;
  if (o.channels) {
    patch["mapper"]["residual_channels"] = *o.channels;
    patch["mapper"]["skip_channels"] = *o.channels;
    patch["mapper"]["post_channels"] = *o.channels;
  }
  if (o.seed) patch["seed"] = *o.seed;
  RunConfig cfg = base_config(common, patch);

  const Manifest manifest = read_manifest(o.manifest);
  const auto entries = require_split(manifest, Split::Train, o.manifest);
  const fs::path out(o.out);
  echo_config(parent_dir(out), cfg);

  ctx.err << "analyzing " << entries.size() << " training utterances\n";
  const std::vector<Analysis> analyses = analyze_entries(entries, analysis_for(cfg, std::nullopt), common.jobs, ctx);
  const PreparedData data = prepare_training_data(analyses);

  MapperModel<float> model = init_model<float>(cfg.mapper, cfg.seed);
  model.input_stats = data.input_stats;
  model.mel_stats = data.mel_stats;
  model.features = cfg.features();

  TrainConfig tc = cfg.train;
  if (tc.checkpoint_every > 0) tc.checkpoint_path = out;
  const int report_every = std::max(1, tc.max_updates / 20);
  const TrainResult result = train(model, data.pairs, tc, [&](int step, double loss) {
    if (step % report_every == 0) ctx.err << "step " << step << " loss " << format_g9(loss) << '\n';
  });
  if (result.skipped > 0)
    ctx.err << "skipped " << result.skipped << " utterances shorter than " << tc.seq_len << " frames\n";

  save_checkpoint(out, result.model);
  fs::path curve = out;
  curve += ".loss.csv";
  std::ofstream os(curve);
  if (!os) throw data_error("cannot write '" + curve.string() + "'");
  const auto smoothed = smooth(result.losses, 100);
  os << "step,loss,smoothed\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i)
    os << i << ',' << format_g9(result.losses[i]) << ',' << format_g9(smoothed[i]) << '\n';

  ctx.out << "trained " << result.losses.size() << " updates; loss " << format_g9(result.losses.front())
          << " -> " << format_g9(smoothed.back()) << " (smoothed); checkpoint " << out.string() << '\n';
  return 0;
}

// resynth / manipulate ------------------------------------------------------------

struct RenderOptions {
  std::string input;
  std::string checkpoint;
  std::string out;
  std::string backend = "griffinlim";
  std::string preset = "auto";
  std::optional<int> gl_iters;
  std::string params_out;
  // manipulate only
  std::vector<std::string> scales;
  std::optional<double> scale_f0;
  std::optional<double> shift_log_f0;
};

ManipulationSpec parse_spec(const RenderOptions& o) {
  ManipulationSpec spec;
  for (const auto& s : o.scales) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw usage_error("--scale expects NAME=FACTOR, got '" + s + "'");
    const auto p = parse_param(s.substr(0, eq));
    if (!p) throw usage_error("unknown parameter '" + s.substr(0, eq) + "'");
    double factor = 0.0;
    try {
      std::size_t used = 0;
      factor = std::stod(s.substr(eq + 1), &used);
      if (used != s.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw usage_error("bad factor in '" + s + "'");
    }
    spec.scale(*p, factor);
  }
  if (o.scale_f0) spec.scale_f0(*o.scale_f0);
  if (o.shift_log_f0) {
    const double shift = spec.log_f0_shift.value_or(0.0) + *o.shift_log_f0;
    spec.shift_log_f0(shift);
  }
  spec.validate();
  return spec;
}

int render(const RenderOptions& o, const CommonOptions& common, const ManipulationSpec* spec, Context& ctx) {
  if (o.backend != "griffinlim" && o.backend != "export")
    throw usage_error("unknown backend '" + o.backend + "' (expected griffinlim or export)");
  nlohmann::json patch = nlohmann::json::object();
  if (o.gl_iters) patch["griffin_lim"]["n_iters"] = *o.gl_iters;
  const RunConfig cfg = base_config(common, patch);
  MapperModel<float> model = load_checkpoint(o.checkpoint);
  const AnalysisConfig acfg = analysis_for_model(model, cfg, !common.config.empty(), o.preset);

  const Analysis a = analyze(load_audio(o.input, acfg.sample_rate), acfg);
  const SpeechParams params = spec ? manipulate(a.params, *spec) : a.params;

  const fs::path out(o.out);
  echo_config(parent_dir(out), cfg);
  if (!o.params_out.empty()) write_params_csv(fs::path(o.params_out), params);

  const Pipeline pipeline(std::move(model), cfg.griffin_lim, cfg.match_energy);
  if (o.backend == "export") {
    export_mel(out, pipeline.mel(params));
    ctx.out << "wrote mel (" << params.n_frames() << " frames) to " << out.string() << '\n';
    return 0;
  }
  const Waveform wav = pipeline.render(params);
  write_wav(out, wav);
  ctx.out << "wrote " << format_g9(wav.duration()) << " s to " << out.string() << '\n';
  return 0;
}

// evaluate -------------------------------------------------------------------------

struct EvaluateOptions {
  std::string manifest;
  std::string checkpoint;
  std::string mode = "copy";
  std::string out;
  std::string format;
  std::vector<double> factors;
  std::vector<std::string> params;
  bool no_synthesis = false;
};

int cmd_evaluate(const EvaluateOptions& o, const CommonOptions& common, Context& ctx) {
  if (o.mode != "copy" && o.mode != "sweep") throw usage_error("--mode must be copy or sweep");
  const RunConfig cfg = base_config(common, {});
  if (!fs::exists(o.checkpoint)) throw data_error("checkpoint '" + o.checkpoint + "' does not exist");
  MapperModel<float> model = load_checkpoint(o.checkpoint);
  const AnalysisConfig acfg = analysis_for_model(model, cfg, !common.config.empty(), std::nullopt);

  SweepOptions sweep;
  if (!o.factors.empty()) sweep.factors = o.factors;
  if (!o.params.empty()) {
    sweep.params.clear();
    for (const auto& n : o.params) {
      const auto p = parse_param(n);
      if (!p || *p == Param::Vuv) throw usage_error("cannot sweep parameter '" + n + "'");
      sweep.params.push_back(*p);
    }
  }
  sweep.synthesize = !o.no_synthesis;
  sweep.jobs = common.jobs;

  const Manifest manifest = read_manifest(o.manifest);
  const auto entries = require_split(manifest, Split::Test, o.manifest);
  const fs::path out(o.out);
  echo_config(parent_dir(out), cfg);

  std::vector<SweepUtterance> utterances;
  for (auto& a : analyze_entries(entries, acfg, common.jobs, ctx)) utterances.push_back({std::move(a)});
  const NormStats stats = model.input_stats;
  const Pipeline pipeline(std::move(model), cfg.griffin_lim, cfg.match_energy);
  const ReportFormat format = format_for(o.format, out);

  if (o.mode == "copy") {
    ParamErrorReport report;
    if (o.no_synthesis) {
      ErrorAccumulator acc(stats);
      for (const auto& u : utterances) acc.add(u.analysis.params, u.analysis.params);
      report = acc.report();
    } else {
      report = copy_synthesis_report(utterances, pipeline, stats, common.jobs);
    }
    write_report(out, report, format);
  } else {
    const SweepReport report = manipulation_sweep(utterances, pipeline, stats, sweep);
    for (const auto& f : report.failures)
      ctx.err << "failed: " << entries[f.utterance].id << " " << name(f.param) << " x" << format_g9(f.factor)
              << ": " << f.message << '\n';
    write_report(out, report, format);
  }
  ctx.out << "wrote " << o.mode << " report for " << utterances.size() << " utterances to " << out.string()
          << '\n';
  return 0;
}

// synth-corpus ------------------------------------------------------------------

struct CorpusOptions {
  std::string out_dir;
  int count = 200;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  double f0_low = 90.0;
  double f0_high = 220.0;
};

int cmd_synth_corpus(const CorpusOptions& o, Context& ctx) {
  if (o.count <= 0) throw usage_error("--count must be positive");
  if (!(o.val_fraction >= 0.0 && o.test_fraction >= 0.0 && o.val_fraction + o.test_fraction < 1.0))
    throw usage_error("split fractions must be non-negative and sum below 1");
  if (!(o.f0_low > 0.0 && o.f0_low < o.f0_high)) throw usage_error("need 0 < f0-low < f0-high");
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const auto n_test = static_cast<int>(std::lround(o.count * o.test_fraction));
  const auto n_val = static_cast<int>(std::lround(o.count * o.val_fraction));
  const int n_train = o.count - n_test - n_val;

  std::mt19937_64 rng(o.seed);
  Manifest manifest;
  for (int i = 0; i < o.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "vowel%04d", i);
    const fs::path path = dir / (std::string(id) + ".wav");
    write_wav(path, synth::vowel(synth::random_vowel(rng, o.f0_low, o.f0_high)));
    ManifestEntry e;
    e.id = id;
    e.path = path;
    e.split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.csv", manifest);
  ctx.out << "wrote " << o.count << " utterances (" << n_train << " train, " << n_val << " val, " << n_test
          << " test) and " << (dir / "manifest.csv").string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app{"neuform: speech parameter analysis, manipulation and resynthesis"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool jobs) {
    sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
    if (jobs) sub->add_option("-j,--jobs", common.jobs, "Utterance-level worker threads")->check(CLI::PositiveNumber);
  };

  AnalyzeOptions analyze_opts;
  auto* analyze_cmd = app.add_subcommand("analyze", "Extract the nine parameters and the mel-spectrogram");
  analyze_cmd->add_option("audio", analyze_opts.inputs, "WAV files")->required();
  analyze_cmd->add_option("-o,--out-dir", analyze_opts.out_dir, "Output directory (default: config output_dir)");
  analyze_cmd->add_option("--preset", analyze_opts.preset, "Voice preset: auto, low or high")
      ->check(CLI::IsMember({"auto", "low", "high"}));
  add_common(analyze_cmd, true);

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train the parameter-to-mel mapper");
  train_cmd->add_option("-m,--manifest", train_opts.manifest, "Manifest CSV")->required();
  train_cmd->add_option("-o,--out", train_opts.out, "Checkpoint path")->required();
  train_cmd->add_option("--updates", train_opts.updates, "Number of optimizer updates");
  train_cmd->add_option("--batch", train_opts.batch, "Sequences per update");
  train_cmd->add_option("--seq-len", train_opts.seq_len, "Frames per training crop");
  train_cmd->add_option("--lr", train_opts.lr, "Adam learning rate");
  train_cmd->add_option("--channels", train_opts.channels, "Residual/skip/post channel count");
  train_cmd->add_option("--checkpoint-every", train_opts.checkpoint_every, "Save every N updates (0: never)");
  train_cmd->add_option("--seed", train_opts.seed, "Seed for initialization and batching");
  add_common(train_cmd, true);

  RenderOptions render_opts;
  auto add_render = [&](CLI::App* sub) {
    sub->add_option("audio", render_opts.input, "Input WAV")->required();
    sub->add_option("-c,--checkpoint", render_opts.checkpoint, "Mapper checkpoint")->required();
    sub->add_option("-o,--out", render_opts.out, "Output WAV (or NFMEL1 file with --backend export)")
        ->required();
    sub->add_option("--backend", render_opts.backend, "griffinlim or export")
        ->check(CLI::IsMember({"griffinlim", "export"}));
    sub->add_option("--preset", render_opts.preset, "Voice preset: auto, low or high")
        ->check(CLI::IsMember({"auto", "low", "high"}));
    sub->add_option("--gl-iters", render_opts.gl_iters, "Griffin-Lim iterations");
    sub->add_option("--params-out", render_opts.params_out, "Also write the rendered parameters as CSV");
    add_common(sub, false);
  };
  auto* resynth_cmd = app.add_subcommand("resynth", "Copy synthesis through the mapper and vocoder");
  add_render(resynth_cmd);
  auto* manip_cmd = app.add_subcommand("manipulate", "Scale parameters and resynthesize");
  add_render(manip_cmd);
  manip_cmd->add_option("--scale", render_opts.scales, "NAME=FACTOR, e.g. f1=1.2 (repeatable)");
  manip_cmd->add_option("--scale-f0", render_opts.scale_f0, "Multiply F0 (adds ln(factor) to log F0)");
  manip_cmd->add_option("--shift-log-f0", render_opts.shift_log_f0, "Add to log F0");

  EvaluateOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("evaluate", "Copy-synthesis or manipulation-sweep evaluation");
  eval_cmd->add_option("-m,--manifest", eval_opts.manifest, "Manifest CSV (test split is used)")->required();
  eval_cmd->add_option("-c,--checkpoint", eval_opts.checkpoint, "Mapper checkpoint")->required();
  eval_cmd->add_option("--mode", eval_opts.mode, "copy or sweep")->check(CLI::IsMember({"copy", "sweep"}));
  eval_cmd->add_option("-o,--out", eval_opts.out, "Report path")->required();
  eval_cmd->add_option("--format", eval_opts.format, "csv or json (default: from extension)")
      ->check(CLI::IsMember({"csv", "json"}));
  eval_cmd->add_option("--factors", eval_opts.factors, "Sweep factors (default 0.7 0.8 0.9 1.1 1.2 1.3)")
      ->delimiter(',');
  eval_cmd->add_option("--params", eval_opts.params, "Swept parameters (default: all continuous)")
      ->delimiter(',');
  eval_cmd->add_flag("--no-synthesis", eval_opts.no_synthesis,
                     "Compare in the parameter domain only (no mapper or vocoder)");
  add_common(eval_cmd, true);

  CorpusOptions corpus_opts;
  auto* corpus_cmd = app.add_subcommand("synth-corpus", "Write a synthetic vowel corpus and its manifest");
  corpus_cmd->add_option("-o,--out-dir", corpus_opts.out_dir, "Output directory")->required();
  corpus_cmd->add_option("-n,--count", corpus_opts.count, "Number of utterances");
  corpus_cmd->add_option("--seed", corpus_opts.seed, "Random seed");
  corpus_cmd->add_option("--val-fraction", corpus_opts.val_fraction, "Fraction for the val split");
  corpus_cmd->add_option("--test-fraction", corpus_opts.test_fraction, "Fraction for the test split");
  corpus_cmd->add_option("--f0-low", corpus_opts.f0_low, "Lowest F0 in Hz");
  corpus_cmd->add_option("--f0-high", corpus_opts.f0_high, "Highest F0 in Hz");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return static_cast<int>(ErrorKind::Usage);
  }

  try {
    if (analyze_cmd->parsed()) return cmd_analyze(analyze_opts, common, ctx);
    if (train_cmd->parsed()) return cmd_train(train_opts, common, ctx);
    if (resynth_cmd->parsed()) return render(render_opts, common, nullptr, ctx);
    if (manip_cmd->parsed()) {
      const ManipulationSpec spec = parse_spec(render_opts);
      return render(render_opts, common, &spec, ctx);
    }
    if (eval_cmd->parsed()) return cmd_evaluate(eval_opts, common, ctx);
    if (corpus_cmd->parsed()) return cmd_synth_corpus(corpus_opts, ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::Data);
  }
  return static_cast<int>(ErrorKind::Usage);
}

}  // namespace neuform::cli
