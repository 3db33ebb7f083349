#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rsvl/commands.hpp"

namespace {

std::vector<std::string> task_names() {
  std::vector<std::string> v;
  for (auto t : rsvl::kAllTasks) v.emplace_back(rsvl::to_string(t));
  return v;
}

const std::map<std::string, rsvl::Modality> kModalityMap = {
    {"opt", rsvl::Modality::opt}, {"sar", rsvl::Modality::sar}, {"ir", rsvl::Modality::ir}};

}  // namespace

int main(int argc, char** argv) {
  using namespace rsvl::cli;
  CLI::App app{"Remote sensing instruction data tools"};
  app.require_subcommand(1);

  ValidateOptions vo;
  auto* validate = app.add_subcommand("validate", "Check markup in a record file");
  validate->add_option("input", vo.input, "Record JSONL")->required();
  validate->add_flag("--strict", vo.strict, "Re-check decomposition counts");
  validate->add_flag("--json", vo.json, "Machine-readable report on stdout");
  std::string rel_vocab;
  validate->add_option("--rel-vocab", rel_vocab, "Relation labels, one per line");

  BuildOptions bo;
  std::string modality;
  std::uint64_t build_seed = 0;
  auto* build = app.add_subcommand("build", "Build instruction records from annotations");
  build->add_option("annotations", bo.annotations, "Annotation JSONL")->required();
  std::string build_task, eval_task;
  build->add_option("--task", build_task, "Task")->required()->check(CLI::IsMember(task_names()));
  build->add_option("-o,--out", bo.out, "Output record JSONL")->required();
  build->add_option("--modality", modality, "Default modality")
      ->check(CLI::IsMember({"opt", "sar", "ir"}));
  std::string synonyms, scores;
  double benchmark = 0.0;
  build->add_option("--synonyms", synonyms, "Synonym table JSON");
  build->add_flag("--validate-captions", bo.validate_captions, "Gate captions and write rejects");
  build->add_option("--scores", scores, "Similarity scores JSON keyed by image_id");
  build->add_option("--benchmark", benchmark, "Benchmark similarity score");
  build->add_option("--seed", build_seed, "Accepted for uniformity; building is deterministic");
  build->add_flag("--normalize-positions", bo.normalize_positions,
                  "Scale 3D positions into [0,999] using scene bounds");
  build->add_flag("--json", bo.json, "Machine-readable summary on stdout");

  EvalOptions eo;
  double radius = 0.0, gate = 0.0;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--task", eval_task, "Task")->required()->check(CLI::IsMember(task_names()));
  eval->add_option("preds", eo.predictions, "Prediction JSONL")->required();
  eval->add_option("gts", eo.ground_truth, "Ground truth JSONL")->required();
  eval->add_option("--success-radius", radius, "Navigation success radius");
  eval->add_option("--iou", eo.iou, "Detection IoU threshold")->capture_default_str();
  eval->add_option("--relation-iou", gate, "Also require relation boxes to overlap by this IoU");
  eval->add_flag("--json", eo.json, "Machine-readable report on stdout");

  DecodeOptions dop;
  auto* dec = app.add_subcommand("decode", "Run the trajectory decoder");
  dec->add_option("weights", dop.weights, "Weight file")->required();
  dec->add_option("latent", dop.latent, "Latent vector JSON")->required();
  dec->add_option("-T,--max-steps", dop.max_steps, "Step budget")->capture_default_str();
  dec->add_option("-p,--threshold", dop.threshold, "Termination threshold")->capture_default_str();

  FitOptions fo;
  int fit_steps = 0;
  auto* fitc = app.add_subcommand("fit", "Fit decoder weights to a target trajectory");
  fitc->add_option("weights_out", fo.weights_out, "Output weight file")->required();
  fitc->add_option("targets", fo.targets, "Targets JSON")->required();
  fitc->add_option("--curve", fo.curve_out, "Loss curve CSV (default: <weights_out>.curve.csv)");
  fitc->add_option("--lr", fo.lr, "Learning rate")->capture_default_str();
  fitc->add_option("--iters", fo.iters, "Iterations")->capture_default_str();
  fitc->add_option("--seed", fo.seed, "Initialization seed")->required();
  fitc->add_option("--d-h", fo.d_h, "Hidden size")->capture_default_str();
  fitc->add_option("-T,--max-steps", fit_steps, "Step budget (default: target length)");
  fitc->add_option("-p,--threshold", fo.threshold, "Termination threshold")->capture_default_str();
  fitc->add_flag("--json", fo.json, "Machine-readable summary on stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kSuccess : kFormatError;
  }

  Streams s{std::cout, std::cerr};
  if (*validate) {
    if (!rel_vocab.empty()) vo.relation_vocabulary = rel_vocab;
    return cmd_validate(vo, s);
  }
  if (*build) {
    bo.task = *rsvl::parse_task(build_task);
    if (!modality.empty()) bo.modality = kModalityMap.at(modality);
    if (!synonyms.empty()) bo.synonyms = synonyms;
    if (!scores.empty()) bo.scores = scores;
    if (build->count("--benchmark")) bo.benchmark = benchmark;
    if (build->count("--seed")) bo.seed = build_seed;
    return cmd_build(bo, s);
  }
  if (*eval) {
    eo.task = *rsvl::parse_task(eval_task);
    if (eval->count("--success-radius")) eo.success_radius = radius;
    if (eval->count("--relation-iou")) eo.relation_iou_gate = gate;
    return cmd_eval(eo, s);
  }
  if (*dec) return cmd_decode(dop, s);
  if (*fitc) {
    if (fo.curve_out.empty()) fo.curve_out = fo.weights_out + ".curve.csv";
    if (fitc->count("-T")) fo.max_steps = fit_steps;
    return cmd_fit(fo, s);
  }
  return kFormatError;
}
