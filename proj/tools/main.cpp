#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "distillwsd/log.hpp"
#include "distillwsd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace distillwsd;

namespace {

struct CommonArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string checkpoint;
  std::string data;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_data) {
  cmd->add_option("--config", args.config, "Configuration file (INI)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Base random seed");
  cmd->add_option("--out", args.out, "Output directory");
  if (needs_data) cmd->add_option("--data", args.data, "Dataset directory written by gen-data");
}

AppConfig config_of(const CommonArgs& args) {
  if (args.config.empty()) {
    AppConfig c;
    c.sync();
    return c;
  }
  return load_config(args.config);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

SplitData data_of(const CommonArgs& args, const AppConfig& config) {
  if (args.data.empty()) throw ConfigError("--data is required");
  return load_data(args.data, config.data);
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw StateError(what + " not found: " + path.string());
}

int cmd_gen_data(const CommonArgs& args) {
  const AppConfig config = config_of(args);
  SceneSpec spec = config.data.scene;
  spec.seed = SeedPlan::from(args.seed).data;
  const auto manifests = generate_dataset(spec, config.data.counts, args.out);
  write_text(fs::path(args.out) / "config.ini", render_config(config));
  for (const auto& m : manifests) spdlog::info("{}: {} images", m.split, m.entries.size());
  return 0;
}

int cmd_train_teacher(const CommonArgs& args) {
  const AppConfig config = config_of(args);
  const SplitData data = data_of(args, config);
  auto result = train_teacher<float>(data.train, config.teacher, config.teacher_train,
                                     SeedPlan::from(args.seed).teacher);
  const fs::path out(args.out);
  const fs::path ckpt = args.checkpoint.empty() ? out / "teacher.ckpt" : fs::path(args.checkpoint);
  save_teacher(result.model, ckpt);
  const auto report = evaluate_split(make_records(data.val, teacher_image_scores(result.model, data.val)),
                                     make_records(data.test, teacher_image_scores(result.model, data.test)),
                                     config.eval.top_k);
  write_text(out / "teacher_metrics.json", report.to_json());
  std::ostringstream losses;
  losses << "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) losses << e + 1 << ',' << result.epoch_losses[e] << '\n';
  write_text(out / "teacher_losses.csv", losses.str());
  spdlog::info("teacher mAP {:.4f}, checkpoint {}", report.map, ckpt.string());
  return 0;
}

int cmd_distill(const CommonArgs& args, int stage, const std::string& stage1_path) {
  const AppConfig config = config_of(args);
  const SeedPlan plan = SeedPlan::from(args.seed);
  const fs::path out(args.out);
  const bool needs_teacher = stage == 1 || config.distill.lambda > 0;
  std::optional<TeacherModel<float>> teacher;
  if (needs_teacher) {
    if (args.checkpoint.empty()) throw StateError("distill needs --checkpoint pointing at a teacher checkpoint");
    require_file(args.checkpoint, "teacher checkpoint");
    teacher.emplace(load_teacher(args.checkpoint));
    teacher->freeze();
  }
  const fs::path stage1_ckpt = stage1_path.empty() ? out / "student_stage1.ckpt" : fs::path(stage1_path);
  if (stage == 2 && config.distill.require_stage1) require_file(stage1_ckpt, "stage-1 checkpoint");

  const SplitData data = data_of(args, config);
  if (stage == 1) {
    StudentModel<float> student(config.student, plan.student);
    const StageReport report = run_stage1(*teacher, student, data.train, config.distill, plan.stage1);
    save_student(student, stage1_ckpt);
    write_text(out / "stage1_report.json", report.to_json());
    return 0;
  }
  StudentModel<float> student = fs::exists(stage1_ckpt) ? load_student(stage1_ckpt)
                                                         : StudentModel<float>(config.student, plan.student);
  TemperatureBank<float> temps(config.data.scene.num_classes, config.teacher.top_n);
  const StageReport report = run_stage2(teacher ? &*teacher : nullptr, student, data.train, data.val,
                                        config.distill, temps, plan.stage2);
  save_student(student, out / "student.ckpt", &temps);
  write_text(out / "stage2_report.json", report.to_json());
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& predictions, const std::string& val_predictions,
             std::optional<double> tau) {
  const AppConfig config = config_of(args);
  const fs::path out(args.out);
  std::vector<PredictionRecord> test, val;
  if (!predictions.empty()) {
    test = parse_predictions(read_text(predictions));
    if (!val_predictions.empty()) val = parse_predictions(read_text(val_predictions));
  } else {
    if (args.checkpoint.empty()) throw StateError("eval needs --checkpoint or --predictions");
    require_file(args.checkpoint, "student checkpoint");
    StudentModel<float> student = load_student(args.checkpoint);
    const SplitData data = data_of(args, config);
    val = make_records(data.val, student_scores(student, data.val));
    test = make_records(data.test, student_scores(student, data.test));
    write_text(out / "predictions.jsonl", format_predictions(test));
  }
  if (test.empty()) throw InputError("no prediction records to evaluate");
  const std::size_t k = test.front().scores.size();
  const double t = tau ? *tau : (val.empty() ? 0.5 : tune_threshold(val));
  const MetricsReport report = evaluate(test, t, std::min(config.eval.top_k, k));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < k; ++c) names.push_back(c < SceneSpec::kMaxClasses ? class_name(c) : std::to_string(c));
  write_text(out / "metrics.json", report.to_json());
  write_text(out / "per_class_ap.csv", report.per_class_csv(names));
  std::cout << "mAP " << report.map << "  F1-C " << report.f1_c << "  F1-O " << report.f1_o << "  tau " << t << '\n';
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const AppConfig config = config_of(args);
  const SplitData data = args.data.empty() ? make_data(config.data, SeedPlan::from(args.seed).data)
                                           : load_data(args.data, config.data);
  const AblationResult result = run_ablation(config, data, args.seed);
  const fs::path out(args.out);
  write_text(out / "ablation.json", result.to_json());
  write_text(out / "ablation.md", result.to_markdown());
  write_text(out / "per_class_gain.csv", result.per_class_gain_csv());
  std::cout << result.to_markdown();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    configure_logging_from_env();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"Distil a weakly-supervised detector into a multi-label classifier"};
  app.require_subcommand(1);

  CommonArgs gen_args, teacher_args, distill_args, eval_args, ablate_args;
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
  add_common(gen, gen_args, false);

  auto* teacher = app.add_subcommand("train-teacher", "Train the detection teacher");
  add_common(teacher, teacher_args, true);
  teacher->add_option("--checkpoint", teacher_args.checkpoint, "Output checkpoint (default OUT/teacher.ckpt)");

  int stage = 1;
  std::string stage1_path;
  auto* distill = app.add_subcommand("distill", "Run one distillation stage");
  add_common(distill, distill_args, true);
  distill->add_option("--stage", stage, "1 (features) or 2 (predictions)")->required()->check(CLI::IsMember({1, 2}));
  distill->add_option("--checkpoint", distill_args.checkpoint, "Teacher checkpoint");
  distill->add_option("--stage1", stage1_path, "Stage-1 student checkpoint (default OUT/student_stage1.ckpt)");

  std::string predictions, val_predictions;
  std::optional<double> tau;
  auto* eval = app.add_subcommand("eval", "Evaluate a student checkpoint or a prediction dump");
  add_common(eval, eval_args, true);
  eval->add_option("--checkpoint", eval_args.checkpoint, "Student checkpoint");
  eval->add_option("--predictions", predictions, "Prediction dump to score instead of a checkpoint");
  eval->add_option("--val-predictions", val_predictions, "Validation dump used to tune the threshold");
  eval->add_option("--tau", tau, "Fixed threshold instead of tuning");

  auto* ablate = app.add_subcommand("ablate", "Run the three-arm ablation over several seeds");
  add_common(ablate, ablate_args, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_args);
    if (*teacher) return cmd_train_teacher(teacher_args);
    if (*distill) return cmd_distill(distill_args, stage, stage1_path);
    if (*eval) return cmd_eval(eval_args, predictions, val_predictions, tau);
    if (*ablate) return cmd_ablate(ablate_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
