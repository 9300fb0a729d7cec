#include "evx/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "evx/dataset.hpp"
#include "evx/error.hpp"
#include "evx/evaluation.hpp"
#include "evx/explainer.hpp"
#include "evx/model.hpp"
#include "evx/study.hpp"
#include "evx/study_http.hpp"
#include "evx/synth.hpp"
#include "evx/train.hpp"
#include "evx/version.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx::cli {

namespace {

constexpr const char* kOutputEnv = "EVX_OUTPUT_DIR";
constexpr const char* kDefaultOutput = "evx-out";

struct Common {
  std::string out;  // empty: $EVX_OUTPUT_DIR, else ./evx-out
};

fs::path output_dir(const Common& common) {
  fs::path dir = common.out;
  if (dir.empty()) {
    const char* env = std::getenv(kOutputEnv);
    dir = (env != nullptr && *env != '\0') ? fs::path(env) : fs::path(kDefaultOutput);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create output directory " + dir.string());
  return dir;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
}

// Reproducibility record written by every subcommand.
void write_run_record(const fs::path& dir, const std::string& subcommand,
                      const std::vector<std::string>& args, json config,
                      std::optional<std::uint64_t> seed) {
  json record = {{"subcommand", subcommand},
                 {"argv", args},
                 {"config", std::move(config)},
                 {"seed", seed ? json(*seed) : json(nullptr)},
                 {"versions",
                  {{"evx", version()},
                   {"opencv", opencv_version()},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"compiler", __VERSION__}}},
                 {"started_at", utc_timestamp()}};
  write_json(dir / "run.json", record);
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) fail(ErrorCode::UnreadableRoot, what + " " + p.string() + " is not a directory");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) fail(ErrorCode::IoError, what + " " + p.string() + " does not exist");
}

DatasetManifest manifest_from_args(const std::string& data, const std::string& manifest,
                                   std::uint64_t seed) {
  if (!manifest.empty()) {
    require_file(manifest, "manifest");
    return load_manifest(manifest);
  }
  require_dir(data, "dataset root");
  return scan(data, seed);
}

int pick_class(const ModelBundle& bundle, const std::string& name) {
  for (std::size_t i = 0; i < bundle.class_names.size(); ++i) {
    if (bundle.class_names[i] == name) return static_cast<int>(i);
  }
  std::string known;
  for (const auto& n : bundle.class_names) known += (known.empty() ? "" : ", ") + n;
  fail(ErrorCode::UnknownClass, "unknown class '" + name + "' (model classes: " + known + ")");
}

// Explains one input and writes the overlay on the original image.
ActivationMap explain_one(const ModelBundle& bundle, const Image& original, int target,
                          CamMethod method, GradientSource source) {
  const Tensor input = image_to_input(original, bundle.config.input_size);
  const ActivationMap map = method == CamMethod::Cam ? cam(bundle, input, target)
                                                     : grad_cam(bundle, input, target, source);
  return resize_map(map, original.height, original.width);
}

volatile std::sig_atomic_t g_stop = 0;
StudyHttpServer* g_server = nullptr;

void on_signal(int) {
  g_stop = 1;
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Explainable event recognition toolkit", "evx"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough(false);

  std::uint64_t seed = kDefaultSplitSeed;
  Common common;
  auto add_out = [&](CLI::App* sub) {
    sub->add_option("--out", common.out,
                    "Output directory (default: $EVX_OUTPUT_DIR, else ./evx-out)");
  };

  // scan
  std::string data, manifest_path;
  SplitFractions fractions;
  auto* scan_cmd = app.add_subcommand("scan", "Index a dataset and assign the stratified split");
  scan_cmd->add_option("--data", data, "Dataset root: <root>/<class>/<images>")->required();
  scan_cmd->add_option("--seed", seed, "Split seed")->capture_default_str();
  scan_cmd->add_option("--train", fractions.train)->capture_default_str();
  scan_cmd->add_option("--val", fractions.val)->capture_default_str();
  scan_cmd->add_option("--test", fractions.test)->capture_default_str();
  add_out(scan_cmd);

  // train
  ModelConfig config;
  std::size_t classes = 0;
  auto* train_cmd = app.add_subcommand("train", "Fine-tune a classifier");
  auto* data_opt = train_cmd->add_option("--data", data, "Dataset root");
  auto* manifest_opt = train_cmd->add_option("--manifest", manifest_path, "Manifest from scan");
  data_opt->excludes(manifest_opt);
  train_cmd->add_option("--classes", classes, "Expected number of classes");
  train_cmd->add_option("--backbone", config.backbone_id)->capture_default_str();
  train_cmd->add_option("--target-layer", config.target_layer);
  train_cmd->add_option("--input-size", config.input_size)->capture_default_str();
  train_cmd->add_option("--epochs", config.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", config.batch_size)->capture_default_str();
  train_cmd->add_option("--lr-backbone", config.lr_backbone)->capture_default_str();
  train_cmd->add_option("--lr-head", config.lr_head)->capture_default_str();
  train_cmd->add_option("--seed", config.seed, "Split and initialisation seed")->capture_default_str();
  add_out(train_cmd);

  // evaluate
  std::string checkpoint, split_name_arg = "test";
  std::size_t eval_batch = 32;
  auto* eval_cmd = app.add_subcommand("evaluate", "Classification report on one split");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  auto* eval_data = eval_cmd->add_option("--data", data, "Dataset root");
  auto* eval_manifest = eval_cmd->add_option("--manifest", manifest_path, "Manifest from scan");
  eval_data->excludes(eval_manifest);
  eval_cmd->add_option("--split", split_name_arg)->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--batch-size", eval_batch)->capture_default_str();
  eval_cmd->add_option("--seed", seed, "Split seed when scanning --data")->capture_default_str();
  add_out(eval_cmd);

  // explain
  std::string image_path, class_name, method_name = "gradcam", gradient_name = "score";
  double alpha = kDefaultBlendAlpha;
  auto* explain_cmd = app.add_subcommand("explain", "Activation maps and overlays");
  explain_cmd->add_option("--checkpoint", checkpoint)->required();
  auto* image_opt = explain_cmd->add_option("--image", image_path, "Explain a single image");
  auto* ex_data = explain_cmd->add_option("--data", data, "Explain a whole split of a dataset");
  auto* ex_manifest = explain_cmd->add_option("--manifest", manifest_path);
  image_opt->excludes(ex_data)->excludes(ex_manifest);
  ex_data->excludes(ex_manifest);
  explain_cmd->add_option("--split", split_name_arg)->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  explain_cmd->add_option("--class-name", class_name, "Target class (default: predicted)")
      ->needs(image_opt);
  explain_cmd->add_option("--method", method_name)->capture_default_str()
      ->check(CLI::IsMember({"gradcam", "cam"}));
  explain_cmd->add_option("--gradient", gradient_name, "score: class logit; loss: log-softmax")
      ->capture_default_str()->check(CLI::IsMember({"score", "loss"}));
  explain_cmd->add_option("--alpha", alpha, "Overlay blend weight in (0, 1)")->capture_default_str();
  explain_cmd->add_option("--seed", seed, "Split seed when scanning --data")->capture_default_str();
  add_out(explain_cmd);

  // study-serve
  std::string state_dir, host = "127.0.0.1", ui_dir, report_path, overlay_dir, image_root;
  int port = 8080;
  std::size_t votes_needed = kDefaultVotesNeeded;
  auto* serve_cmd = app.add_subcommand("study-serve", "Run the annotation study HTTP service");
  serve_cmd->add_option("--state", state_dir, "Study state directory")->required();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--ui", ui_dir, "Static annotation UI directory");
  auto* create_report = serve_cmd->add_option("--report", report_path,
                                              "Create a study from this report.json first");
  serve_cmd->add_option("--overlays", overlay_dir, "Overlay directory written by explain")
      ->needs(create_report);
  serve_cmd->add_option("--images", image_root, "Dataset root holding the originals")
      ->needs(create_report);
  serve_cmd->add_option("--votes-needed", votes_needed)->capture_default_str();
  add_out(serve_cmd);

  // study-report
  std::string study_id;
  auto* study_report_cmd = app.add_subcommand("study-report", "Score a study from its vote log");
  study_report_cmd->add_option("--state", state_dir)->required();
  study_report_cmd->add_option("--study", study_id)->required();
  add_out(study_report_cmd);

  // make-toy
  std::size_t per_class = 100, image_size = 64;
  auto* toy_cmd = app.add_subcommand("make-toy", "Write the synthetic circle/square/triangle set");
  toy_cmd->add_option("--per-class", per_class)->capture_default_str();
  toy_cmd->add_option("--size", image_size)->capture_default_str();
  toy_cmd->add_option("--seed", seed)->capture_default_str();
  add_out(toy_cmd);

  // pretrain
  ShapesPretrainRecipe recipe;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Rebuild the evnet-shapes backbone weights");
  pretrain_cmd->add_option("--per-class", recipe.per_class)->capture_default_str();
  pretrain_cmd->add_option("--size", recipe.image_size)->capture_default_str();
  pretrain_cmd->add_option("--epochs", recipe.epochs)->capture_default_str();
  add_out(pretrain_cmd);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const std::vector<std::string> recorded(args.begin() + (args.empty() ? 0 : 1), args.end());
  try {
    if (*scan_cmd) {
      require_dir(data, "dataset root");
      const fs::path out = output_dir(common);
      write_run_record(out, "scan", recorded, {{"fractions", {fractions.train, fractions.val, fractions.test}}},
                       seed);
      const DatasetManifest m = scan(data, seed, fractions);
      save_manifest(m, out / "manifest.json");
      std::cout << "classes " << m.classes.size() << ", samples " << m.samples.size()
                << " (train " << m.split_size(Split::Train) << ", val "
                << m.split_size(Split::Val) << ", test " << m.split_size(Split::Test)
                << "), skipped " << m.skipped_files << "\n";
    } else if (*train_cmd) {
      if (data.empty() && manifest_path.empty()) {
        throw CLI::RequiredError("--data or --manifest");
      }
      const DatasetManifest m = manifest_from_args(data, manifest_path, config.seed);
      if (classes != 0 && classes != m.classes.size()) {
        fail(ErrorCode::ClassCountMismatch, "--classes " + std::to_string(classes) +
                                                " but the dataset has " +
                                                std::to_string(m.classes.size()));
      }
      config.num_classes = m.classes.size();
      config.validate();
      const fs::path out = output_dir(common);
      write_run_record(out, "train", recorded, config_to_json(config), config.seed);
      save_manifest(m, out / "manifest.json");
      ModelBundle bundle = build(config, m.class_names());
      std::ofstream log(out / "train_log.jsonl");
      FinetuneOptions options;
      options.on_epoch = [&](const EpochRecord& r) {
        log << epoch_to_json(r).dump() << "\n";
        log.flush();
        std::cerr << "epoch " << r.epoch << "/" << config.epochs << " loss " << r.train_loss
                  << " val_weighted_f1 " << r.val_weighted_f1 << "\n";
      };
      const TrainRecord record = finetune(bundle, m, options);
      save_checkpoint(bundle, out / "model.ckpt");
      std::cout << "best epoch " << record.best_epoch << " (val weighted F1 "
                << record.best_val_f1 << "), checkpoint " << (out / "model.ckpt").string() << "\n";
    } else if (*eval_cmd) {
      require_file(checkpoint, "checkpoint");
      if (data.empty() && manifest_path.empty()) throw CLI::RequiredError("--data or --manifest");
      const ModelBundle bundle = load_checkpoint(checkpoint);
      const DatasetManifest m = manifest_from_args(data, manifest_path, seed);
      const fs::path out = output_dir(common);
      write_run_record(out, "evaluate", recorded, config_to_json(bundle.config), m.seed);
      const ClassificationReport report = evaluate(bundle, m, parse_split(split_name_arg), eval_batch);
      save_report(report, out / "report.json");
      const std::string table = render_report_table(report);
      write_text(out / "report.txt", table);
      std::cout << table;
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*explain_cmd) {
      require_file(checkpoint, "checkpoint");
      if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::ParamError, "--alpha must lie in (0, 1)");
      const CamMethod method = method_name == "cam" ? CamMethod::Cam : CamMethod::GradCam;
      const GradientSource source =
          gradient_name == "loss" ? GradientSource::Loss : GradientSource::ClassScore;
      const ModelBundle bundle = load_checkpoint(checkpoint);
      json cfg = config_to_json(bundle.config);
      cfg["method"] = method_name;
      cfg["gradient"] = gradient_name;
      cfg["blend_alpha"] = alpha;
      if (!image_path.empty()) {
        require_file(image_path, "image");
        const Image original = read_image(image_path);
        const int target = class_name.empty()
                               ? predict(bundle, image_to_input(original, bundle.config.input_size))
                                     .class_ids[0]
                               : pick_class(bundle, class_name);
        const fs::path out = output_dir(common);
        write_run_record(out, "explain", recorded, cfg, std::nullopt);
        const ActivationMap map = explain_one(bundle, original, target, method, source);
        const std::string stem = fs::path(image_path).stem().string();
        write_png(out / (stem + "_overlay.png"), render_overlay(original, map, alpha));
        export_map(map, out / (stem + "_" + std::string(cam_method_name(method)) + ".png"));
        std::cout << "class " << bundle.class_names[static_cast<std::size_t>(target)] << ", overlay "
                  << (out / (stem + "_overlay.png")).string() << "\n";
      } else {
        if (data.empty() && manifest_path.empty()) {
          throw CLI::RequiredError("--image, --data or --manifest");
        }
        const DatasetManifest m = manifest_from_args(data, manifest_path, seed);
        const Split split = parse_split(split_name_arg);
        const fs::path out = output_dir(common);
        write_run_record(out, "explain", recorded, cfg, m.seed);
        const std::size_t n = m.split_size(split);
        if (n == 0) fail(ErrorCode::EmptySplit, "split " + split_name_arg + " is empty");
        const auto positions = m.split_indices(split);
        std::vector<PredictionRecord> records;
        for (std::size_t i = 0; i < n; ++i) {
          const Sample& s = m.samples[positions[i]];
          const Image original = read_image(m.root / s.sample_id);
          const Prediction p = predict(bundle, image_to_input(original, bundle.config.input_size));
          const int predicted = p.class_ids[0];
          const ActivationMap map = explain_one(bundle, original, predicted, method, source);
          const fs::path overlay = overlay_file(out / "overlays", s.sample_id);
          fs::create_directories(overlay.parent_path());
          write_png(overlay, render_overlay(original, map, alpha));
          const fs::path gray = overlay_file(out / "maps", s.sample_id);
          fs::create_directories(gray.parent_path());
          export_map(map, gray);
          records.push_back({s.sample_id, s.class_id, predicted,
                             p.probabilities[static_cast<std::size_t>(predicted)]});
        }
        const ClassificationReport report = build_report(records, bundle.class_names);
        save_report(report, out / "report.json");
        const Gallery gallery = misclassification_gallery(
            report, [&](const std::string& id) -> std::optional<fs::path> {
              return overlay_file(out / "overlays", id);
            });
        write_text(out / "gallery.html", render_gallery_html(gallery));
        std::cout << "explained " << n << " samples, gallery " << (out / "gallery.html").string()
                  << "\n";
      }
    } else if (*serve_cmd) {
      if (!report_path.empty()) {
        require_file(report_path, "report");
        require_dir(overlay_dir, "overlay directory");
        require_dir(image_root, "image root");
      }
      if (!ui_dir.empty()) require_dir(ui_dir, "UI directory");
      const fs::path out = common.out.empty() && std::getenv(kOutputEnv) == nullptr
                               ? fs::path(state_dir)
                               : output_dir(common);
      fs::create_directories(out);
      StudyService service(state_dir);
      write_run_record(out, "study-serve", recorded,
                       {{"state", state_dir}, {"host", host}, {"port", port},
                        {"votes_needed", votes_needed}},
                       std::nullopt);
      if (!report_path.empty()) {
        const std::string id = service.create_study(
            load_report(report_path), image_root,
            [&](const std::string& sample_id) -> std::optional<fs::path> {
              fs::path p = overlay_file(overlay_dir, sample_id);
              if (fs::is_regular_file(p)) return p;
              return std::nullopt;
            },
            votes_needed);
        std::cout << "created " << id << "\n";
      }
      StudyHttpServer server(service, ui_dir);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << host << ":" << port << std::endl;
      const bool ok = server.listen(host, port);
      g_server = nullptr;
      if (!ok && g_stop == 0) fail(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
    } else if (*study_report_cmd) {
      require_dir(state_dir, "state directory");
      const StudyService service(state_dir);
      const StudyReport report = service.report(study_id);
      const fs::path out = output_dir(common);
      write_run_record(out, "study-report", recorded, {{"state", state_dir}, {"study", study_id}},
                       std::nullopt);
      write_json(out / "study_report.json", study_report_to_json(report));
      const std::string table = render_study_table(report);
      write_text(out / "study_report.txt", table);
      std::cout << table;
    } else if (*toy_cmd) {
      const fs::path out = output_dir(common);
      write_run_record(out, "make-toy", recorded, {{"per_class", per_class}, {"size", image_size}},
                       seed);
      write_toy_dataset(out / "toy", per_class, image_size, seed);
      std::cout << "wrote " << (out / "toy").string() << "\n";
    } else if (*pretrain_cmd) {
      const fs::path out = output_dir(common);
      write_run_record(out, "pretrain", recorded,
                       {{"per_class", recipe.per_class}, {"size", recipe.image_size},
                        {"epochs", recipe.epochs}, {"batch_size", recipe.batch_size},
                        {"learning_rate", recipe.learning_rate}},
                       recipe.corpus_seed);
      const ModelBundle bundle = pretrain_shapes_backbone(
          recipe, [](std::size_t epoch, double loss, double acc) {
            std::cerr << "epoch " << epoch << " loss " << loss << " accuracy " << acc << "\n";
          });
      save_checkpoint(bundle, out / "evnet-shapes.ckpt");
      std::cout << "wrote " << (out / "evnet-shapes.ckpt").string() << "\n";
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code_name() << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace evx::cli
