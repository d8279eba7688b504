#include "diffcod/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

#include "diffcod/augment.hpp"
#include "diffcod/config.hpp"
#include "diffcod/dataset.hpp"
#include "diffcod/image_io.hpp"
#include "diffcod/random.hpp"

namespace diffcod {
namespace {

namespace fs = std::filesystem;

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::optional<std::string>> flags;

  KeyValues overrides() const {
    KeyValues kv;
    for (const auto& [k, v] : flags) {
      if (v) kv[canonical_key(k)] = *v;
    }
    return kv;
  }
};

void add_options(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_file, "key=value configuration file");
  for (const auto& spec : config_schema()) {
    cmd.app->add_option("--" + spec.name, cmd.flags[spec.name], spec.help);
  }
  cmd.app->add_option("--lr", cmd.flags["lr"], "alias for --learning_rate");
  cmd.app->add_option("--size", cmd.flags["size"], "alias for --image_size");
}

std::uint64_t stem_hash(const std::string& stem) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : stem) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Accepts either a plain directory of files or a dataset root containing `sub`.
fs::path resolve_dir(const fs::path& dir, const char* sub) {
  if (fs::is_directory(dir / sub)) return dir / sub;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  return dir;
}

// Relative manifests not found from the working directory are looked up
// under the dataset root, as in training.
std::vector<std::string> manifest_stems(const RunConfig& c, const fs::path& root) {
  if (c.manifest.empty()) return {};
  const bool as_given = c.manifest.is_absolute() || fs::exists(c.manifest);
  return read_manifest(as_given ? c.manifest : root / c.manifest);
}

int cmd_train(const RunConfig& user, std::ostream& out) {
  user.require({"data", "out"});
  RunConfig c = user;
  std::optional<Checkpoint> resume;
  if (!user.resume.empty()) {
    resume = load_checkpoint(user.resume);
    KeyValues merged = resume->config;
    for (const auto& [k, v] : user.explicit_values) merged[k] = v;
    c = build_config(merged);
  }
  const auto spec = DatasetSpec::open(c.data, c.manifest);
  std::vector<ImageMaskPair> pairs;
  pairs.reserve(spec.stems.size());
  for (const auto& stem : spec.stems) pairs.push_back(load_pair(spec, stem));

  TrainRunOptions options;
  options.checkpoint_path = c.out;
  options.loss_log = c.loss_log.empty() ? fs::path(c.out).replace_extension(".loss.csv")
                                        : c.loss_log;
  for (const auto& p : {options.checkpoint_path, options.loss_log}) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  }
  if (c.log_every > 0) {
    options.on_step = [&](long step, const LossBreakdown& l) {
      if (step % c.log_every == 0 || step == c.train.max_steps) {
        char line[160];
        std::snprintf(line, sizeof line, "step %ld simple %.5f vlb %.5f static %.5f total %.5f",
                      step, l.simple, l.vlb, l.static_term, l.total);
        out << line << '\n' << std::flush;
      }
    };
  }
  const Checkpoint last = train(pairs, c.train, options, resume ? &*resume : nullptr);
  out << "trained " << last.step << " steps on " << pairs.size() << " pairs -> " << c.out.string()
      << '\n';
  return 0;
}

void write_mask(const fs::path& path, const Tensor<float>& mask01, int height, int width) {
  const Tensor<float> chw = mask01.reshaped({1, mask01.dim(-2), mask01.dim(-1)});
  write_image(path, resize_bilinear(chw, height, width));
}

int cmd_sample(const RunConfig& c, std::ostream& out) {
  c.require({"checkpoint", "images", "out"});
  const LoadedModel loaded = load_model(load_checkpoint(c.checkpoint));
  const int size = loaded.config.image_size;
  if (c.sample.ensemble > 1 && !c.sample.trace.empty()) {
    throw ConfigError("key 'trace': snapshots are only recorded with ensemble=1");
  }
  const fs::path dir = resolve_dir(c.images, "Imgs");
  std::vector<fs::path> files;
  const auto wanted = manifest_stems(c, c.images);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), stem) == wanted.end()) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no images found in " + dir.string());
  fs::create_directories(c.out);

  for (const auto& file : files) {
    const std::string stem = file.stem().string();
    const Tensor<float> image = read_image(file);
    const int h = image.dim(1);
    const int w = image.dim(2);
    const Tensor<float> batch = resize_bilinear(image, size, size).reshaped({1, 3, size, size});
    const std::uint64_t seed = derive_seed(c.train.seed, {stem_hash(stem)});
    if (c.sample.ensemble == 1) {
      SampleOptions opts;
      opts.num_steps = c.sample.steps;
      opts.seed = seed;
      opts.trace_at = c.sample.trace;
      const auto trace = sample(*loaded.model, loaded.schedule, batch, opts);
      write_mask(c.out / (stem + ".png"), trace.mask, h, w);
      for (std::size_t i = 0; i < trace.snapshots.size(); ++i) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_t%03d.png", trace.snapshot_steps[i]);
        write_mask(c.out / (stem + suffix), trace.snapshots[i], h, w);
      }
    } else {
      const auto mask = sample_ensemble(*loaded.model, loaded.schedule, batch, c.sample.steps,
                                        c.sample.ensemble, seed, c.sample.ensemble_mode);
      write_mask(c.out / (stem + ".png"), mask, h, w);
    }
  }
  out << "sampled " << files.size() << " masks -> " << c.out.string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& out, std::ostream& err) {
  c.require({"pred", "gt"});
  const MetricReport report =
      evaluate_dataset(c.pred, resolve_dir(c.gt, "GT"), c.metrics, manifest_stems(c, c.gt));
  for (const auto& stem : report.unmatched) err << "WARN unmatched: " << stem << '\n';
  for (const auto& p : {c.report, c.json}) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  }
  if (!c.report.empty()) write_report_csv(c.report, report);
  if (!c.json.empty()) write_report_json(c.json, report);
  out << "image,s_alpha,f_w,f_m,e_m,mae\n" << format_mean_row(report) << '\n';
  return 0;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  c.require({"out"});
  const auto spec = generate_synthetic(c.synth, c.out);
  out << "wrote " << spec.stems.size() << " pairs -> " << c.out.string() << '\n';
  return 0;
}

int cmd_schedule_dump(const RunConfig& c, std::ostream& out) {
  NoiseSchedule s = make_linear_schedule(c.train.T, c.train.beta_start, c.train.beta_end);
  if (c.sample.steps > 0) s = respace(s, c.sample.steps);
  out << "t,beta,alpha_bar,posterior_variance\n";
  char line[128];
  for (int t = 1; t <= s.T(); ++t) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", s.original_index(t), s.beta(t),
                  s.alpha_bar(t), s.posterior_variance(t));
    out << line;
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Camouflaged object segmentation by conditional mask diffusion", "diffcod"};
  app.set_version_flag("--version",
                       std::string("diffcod ") + DIFFCOD_VERSION + " (checkpoint format " +
                           std::to_string(kCheckpointFormatVersion) + ")");
  app.require_subcommand(1);

  std::map<std::string, Command> commands;
  const std::pair<const char*, const char*> names[] = {
      {"train", "train a model on an Imgs/ + GT/ dataset"},
      {"sample", "predict masks for a directory of images"},
      {"eval", "score predicted masks against ground truth"},
      {"synth", "generate a synthetic camouflage dataset"},
      {"schedule-dump", "print the noise schedule as CSV"},
  };
  for (const auto& [name, help] : names) {
    Command& cmd = commands[name];
    cmd.app = app.add_subcommand(name, help);
    add_options(cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "ERROR usage: " << e.what() << '\n';
    const CLI::App* sub = nullptr;
    for (const auto& [name, cmd] : commands) {
      if (cmd.app->parsed()) sub = cmd.app;
    }
    err << (sub ? sub->help() : app.help());
    return 2;
  }

  try {
    for (auto& [name, cmd] : commands) {
      if (!cmd.app->parsed()) continue;
      const RunConfig config = parse_config(cmd.config_file, cmd.overrides());
      if (name == "train") return cmd_train(config, out);
      if (name == "sample") return cmd_sample(config, out);
      if (name == "eval") return cmd_eval(config, out, err);
      if (name == "synth") return cmd_synth(config, out);
      return cmd_schedule_dump(config, out);
    }
  } catch (const Error& e) {
    err << "ERROR " << e.code() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "ERROR internal: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace diffcod
