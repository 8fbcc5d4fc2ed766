#include "partpool/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace partpool {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigInvalid("config: unknown key '" + where + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid("config: bad value for '" + where + key + "'");
  }
}

void read_proposals(const json& j, ProposalConfig& p, const std::string& where) {
  if (!j.is_object()) throw ConfigInvalid("config: '" + where + "' must be an object");
  reject_unknown(j, {"per_object", "jitter_sigma", "loose_per_object", "loose_sigma", "background"},
                 where + ".");
  read(j, "per_object", p.per_object, where + ".");
  read(j, "jitter_sigma", p.jitter_sigma, where + ".");
  read(j, "loose_per_object", p.loose_per_object, where + ".");
  read(j, "loose_sigma", p.loose_sigma, where + ".");
  read(j, "background", p.background, where + ".");
}

json proposals_json(const ProposalConfig& p) {
  return {{"per_object", p.per_object},
          {"jitter_sigma", p.jitter_sigma},
          {"loose_per_object", p.loose_per_object},
          {"loose_sigma", p.loose_sigma},
          {"background", p.background}};
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigInvalid("config: " + msg);
}

}  // namespace

double parse_lambda(const std::string& text) {
  if (text == "inf" || text == "infinity" || text == "+inf") return std::numeric_limits<double>::infinity();
  try {
    size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigInvalid("lambda_def: trailing characters in '" + text + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigInvalid("lambda_def: cannot parse '" + text + "'");
  }
}

bool Config::lambda_infinite() const { return std::isinf(lambda_def); }

void validate(const Config& c) {
  require(c.schema_version == kConfigSchemaVersion, "unsupported schema_version");
  require(c.k >= 1, "k must be >= 1");
  require(c.num_classes >= 1, "num_classes must be >= 1");
  require(c.lambda_def >= 0.0, "lambda_def must be >= 0");
  if (c.search_radius) require(c.search_radius->sx >= 0 && c.search_radius->sy >= 0, "search_radius must be >= 0");
  require(c.enlarge_factor > 0.0, "enlarge_factor must be > 0");
  require(c.loss_weight >= 0.0, "loss_weight must be >= 0");
  require(std::isfinite(c.logit_scale) && c.logit_scale > 0.0, "logit_scale must be finite and > 0");
  for (double v : c.box_target_std) require(v > 0.0 && std::isfinite(v), "box_target_std entries must be > 0");
  require(c.refine_hidden >= 1, "refine_hidden must be >= 1");
  require(c.hidden_channels >= 1, "hidden_channels must be >= 1");
  require(c.downsample >= 1, "downsample must be >= 1");
  const SceneConfig& s = c.scene;
  require(s.height >= c.downsample && s.width >= c.downsample, "scene smaller than downsample");
  require(s.channels >= 3, "scene.channels must be >= 3");
  require(s.min_objects >= 1 && s.max_objects >= s.min_objects, "scene object counts");
  require(s.min_size > 0.0 && s.max_size >= s.min_size, "scene sizes");
  require(s.max_size < std::min(s.height, s.width), "scene.max_size must fit in the image");
  require(s.part_offset >= 0.0 && s.part_offset <= 1.0, "scene.part_offset must be in [0, 1]");
  require(s.noise >= 0.0, "scene.noise must be >= 0");
  require(s.max_overlap_iou >= 0.0 && s.max_overlap_iou <= 1.0, "scene.max_overlap_iou in [0, 1]");
  require(s.distractors >= 0, "scene.distractors must be >= 0");
  for (const ProposalConfig* p : {&c.train.proposals, &c.eval.proposals}) {
    require(p->per_object >= 1, "proposals.per_object must be >= 1");
    require(p->loose_per_object >= 0 && p->background >= 0, "proposal counts must be >= 0");
    require(p->jitter_sigma >= 0.0 && p->loose_sigma >= 0.0, "proposal sigmas must be >= 0");
  }
  require(c.train.scenes >= 1, "train.scenes must be >= 1");
  require(c.train.iterations >= 0, "train.iterations must be >= 0");
  require(c.train.learning_rate > 0.0, "train.learning_rate must be > 0");
  require(c.train.momentum >= 0.0 && c.train.momentum < 1.0, "train.momentum in [0, 1)");
  require(c.train.weight_decay >= 0.0, "train.weight_decay must be >= 0");
  require(c.train.regions_per_image >= 1, "train.regions_per_image must be >= 1");
  require(c.train.fg_fraction >= 0.0 && c.train.fg_fraction <= 1.0, "train.fg_fraction in [0, 1]");
  require(c.eval.scenes >= 1, "eval.scenes must be >= 1");
  require(c.eval.nms_threshold >= 0.0 && c.eval.nms_threshold <= 1.0, "eval.nms_threshold in [0, 1]");
}

Config parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigInvalid(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigInvalid("config: top level must be an object");
  if (!j.contains("schema_version")) throw ConfigInvalid("config: missing schema_version");
  reject_unknown(j,
                 {"schema_version", "seed", "k", "num_classes", "lambda_def", "search_radius",
                  "enlarge_factor", "loss_weight", "logit_scale", "box_target_std", "refine",
                  "refine_hidden", "hidden_channels", "downsample", "scene", "train", "eval"},
                 "");
  Config c;
  read(j, "schema_version", c.schema_version, "");
  read(j, "seed", c.seed, "");
  read(j, "k", c.k, "");
  read(j, "num_classes", c.num_classes, "");
  if (j.contains("lambda_def")) {
    const json& l = j.at("lambda_def");
    if (l.is_string()) {
      c.lambda_def = parse_lambda(l.get<std::string>());
    } else if (l.is_number()) {
      c.lambda_def = l.get<double>();
    } else {
      throw ConfigInvalid("config: lambda_def must be a number or \"inf\"");
    }
  }
  if (j.contains("search_radius") && !j.at("search_radius").is_null()) {
    const json& r = j.at("search_radius");
    if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer())
      throw ConfigInvalid("config: search_radius must be [sx, sy] integers or null");
    c.search_radius = SearchRadius{r[0].get<int>(), r[1].get<int>()};
  }
  read(j, "enlarge_factor", c.enlarge_factor, "");
  read(j, "loss_weight", c.loss_weight, "");
  read(j, "logit_scale", c.logit_scale, "");
  if (j.contains("box_target_std") && (!j.at("box_target_std").is_array() || j.at("box_target_std").size() != 4))
    throw ConfigInvalid("config: box_target_std must be an array of 4 numbers");
  read(j, "box_target_std", c.box_target_std, "");
  read(j, "refine", c.refine, "");
  read(j, "refine_hidden", c.refine_hidden, "");
  read(j, "hidden_channels", c.hidden_channels, "");
  read(j, "downsample", c.downsample, "");
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    if (!s.is_object()) throw ConfigInvalid("config: 'scene' must be an object");
    reject_unknown(s,
                   {"height", "width", "channels", "min_objects", "max_objects", "min_size",
                    "max_size", "part_offset", "noise", "max_overlap_iou", "distractors"},
                   "scene.");
    read(s, "height", c.scene.height, "scene.");
    read(s, "width", c.scene.width, "scene.");
    read(s, "channels", c.scene.channels, "scene.");
    read(s, "min_objects", c.scene.min_objects, "scene.");
    read(s, "max_objects", c.scene.max_objects, "scene.");
    read(s, "min_size", c.scene.min_size, "scene.");
    read(s, "max_size", c.scene.max_size, "scene.");
    read(s, "part_offset", c.scene.part_offset, "scene.");
    read(s, "noise", c.scene.noise, "scene.");
    read(s, "max_overlap_iou", c.scene.max_overlap_iou, "scene.");
    read(s, "distractors", c.scene.distractors, "scene.");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (!t.is_object()) throw ConfigInvalid("config: 'train' must be an object");
    reject_unknown(t,
                   {"scenes", "iterations", "learning_rate", "momentum", "weight_decay",
                    "regions_per_image", "fg_fraction", "proposals"},
                   "train.");
    read(t, "scenes", c.train.scenes, "train.");
    read(t, "iterations", c.train.iterations, "train.");
    read(t, "learning_rate", c.train.learning_rate, "train.");
    read(t, "momentum", c.train.momentum, "train.");
    read(t, "weight_decay", c.train.weight_decay, "train.");
    read(t, "regions_per_image", c.train.regions_per_image, "train.");
    read(t, "fg_fraction", c.train.fg_fraction, "train.");
    if (t.contains("proposals")) read_proposals(t.at("proposals"), c.train.proposals, "train.proposals");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (!e.is_object()) throw ConfigInvalid("config: 'eval' must be an object");
    reject_unknown(e, {"scenes", "nms_threshold", "proposals"}, "eval.");
    read(e, "scenes", c.eval.scenes, "eval.");
    read(e, "nms_threshold", c.eval.nms_threshold, "eval.");
    if (e.contains("proposals")) read_proposals(e.at("proposals"), c.eval.proposals, "eval.proposals");
  }
  validate(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const Config& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["k"] = c.k;
  j["num_classes"] = c.num_classes;
  if (c.lambda_infinite()) {
    j["lambda_def"] = "inf";
  } else {
    j["lambda_def"] = c.lambda_def;
  }
  if (c.search_radius) {
    j["search_radius"] = {c.search_radius->sx, c.search_radius->sy};
  } else {
    j["search_radius"] = nullptr;
  }
  j["enlarge_factor"] = c.enlarge_factor;
  j["loss_weight"] = c.loss_weight;
  j["logit_scale"] = c.logit_scale;
  j["box_target_std"] = c.box_target_std;
  j["refine"] = c.refine;
  j["refine_hidden"] = c.refine_hidden;
  j["hidden_channels"] = c.hidden_channels;
  j["downsample"] = c.downsample;
  const SceneConfig& s = c.scene;
  j["scene"] = {{"height", s.height},
                {"width", s.width},
                {"channels", s.channels},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"min_size", s.min_size},
                {"max_size", s.max_size},
                {"part_offset", s.part_offset},
                {"noise", s.noise},
                {"max_overlap_iou", s.max_overlap_iou},
                {"distractors", s.distractors}};
  const TrainConfig& t = c.train;
  j["train"] = {{"scenes", t.scenes},
                {"iterations", t.iterations},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"regions_per_image", t.regions_per_image},
                {"fg_fraction", t.fg_fraction},
                {"proposals", proposals_json(t.proposals)}};
  j["eval"] = {{"scenes", c.eval.scenes},
               {"nms_threshold", c.eval.nms_threshold},
               {"proposals", proposals_json(c.eval.proposals)}};
  return j.dump(2);
}

}  // namespace partpool
