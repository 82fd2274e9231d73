#include "pertrender/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pertrender {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

std::string_view mode_name(EvalMode m) { return m == EvalMode::Closed ? "closed" : "mc"; }
std::string_view estimator_name(Estimator e) { return e == Estimator::Plain ? "plain" : "vr"; }
std::string_view schedule_name(DecaySchedule s) {
  return s == DecaySchedule::Additive ? "additive" : "multiplicative";
}

json to_tree(const ExperimentConfig& c) {
  json j;
  j["scene"] = {{"mesh", c.mesh},
                {"cube_side", c.cube_side},
                {"fan_triangulate", c.fan_triangulate},
                {"rotation", vec(c.rotation)},
                {"translation", vec(c.translation)}};
  j["camera"] = {{"fov_deg", c.fov_deg},   {"height", c.camera.height}, {"width", c.camera.width},
                 {"eye", vec(c.camera.eye)}, {"at", vec(c.camera.at)},    {"up", vec(c.camera.up)},
                 {"near", c.camera.near},    {"far", c.camera.far}};
  j["light"] = {{"enabled", c.light.enabled},
                {"direction", vec(c.light.direction)},
                {"ambient", c.light.ambient},
                {"diffuse", c.light.diffuse}};
  j["render"] = {{"background", vec(c.render.background)},
                 {"mode", mode_name(c.render.mode)},
                 {"estimator", estimator_name(c.render.estimator)},
                 {"cull", c.render.cull},
                 {"cull_sigmas", c.render.cull_sigmas},
                 {"squared_distance", c.render.squared_distance},
                 {"occupancy_floor", c.render.occupancy_floor},
                 {"sample_budget", c.render.sample_budget}};
  j["smoothing"] = {{"sigma", c.smoothing.sigma},
                    {"gamma", c.smoothing.gamma},
                    {"alpha", c.smoothing.alpha},
                    {"samples", c.smoothing.samples},
                    {"raster_prior", to_string(c.smoothing.raster_prior)},
                    {"agg_prior", to_string(c.smoothing.agg_prior)}};
  j["adaptive"] = {{"enabled", c.adaptive},
                   {"beta", c.controller.beta},
                   {"decay", c.controller.decay},
                   {"floor", c.controller.floor},
                   {"schedule", schedule_name(c.controller.schedule)},
                   {"additive_step", c.controller.additive_step}};
  j["optimizer"] = {{"lr", c.adam.lr},
                    {"beta1", c.adam.beta1},
                    {"beta2", c.adam.beta2},
                    {"eps", c.adam.eps},
                    {"iterations", c.iterations}};
  j["task"] = {{"trials", c.trials},
               {"perturbation_deg", c.perturbation_deg},
               {"threshold_deg", c.threshold_deg},
               {"threshold_sweep", c.threshold_sweep},
               {"true_rotation", c.true_rotation ? vec(*c.true_rotation) : json(nullptr)}};
  j["render_sweep"] = c.render_sweep;
  j["bench"] = {{"samples", c.bench_samples}, {"warmup", c.bench_warmup}, {"repeats", c.bench_repeats}};
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["threads"] = c.threads;
  return j;
}

void reject_unknown(const json& input, const json& reference, const std::string& prefix) {
  if (!input.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : input.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (reference[key].is_object()) reject_unknown(value, reference[key], path);
  }
}

void merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (base[key].is_object() && value.is_object()) {
      merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  template <typename T>
  T get(const std::string& path) const {
    try {
      return node(path).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + path + "' has the wrong type (got " + node(path).dump() + ")");
    }
  }

  Vec3 vec3(const std::string& path) const {
    const auto v = get<std::vector<double>>(path);
    if (v.size() != 3) throw ConfigError("config: '" + path + "' must have 3 entries");
    return Vec3(v[0], v[1], v[2]);
  }

  const json& node(const std::string& path) const {
    const json* cur = &root_;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      cur = &cur->at(path.substr(start, dot - start));
      if (dot == std::string::npos) return *cur;
      start = dot + 1;
    }
  }

 private:
  const json& root_;
};

EvalMode parse_mode(const std::string& s) {
  if (s == "closed") return EvalMode::Closed;
  if (s == "mc") return EvalMode::MonteCarlo;
  throw ConfigError("config: render.mode must be 'closed' or 'mc', got '" + s + "'");
}

Estimator parse_estimator(const std::string& s) {
  if (s == "vr") return Estimator::VarianceReduced;
  if (s == "plain") return Estimator::Plain;
  throw ConfigError("config: render.estimator must be 'vr' or 'plain', got '" + s + "'");
}

DecaySchedule parse_schedule(const std::string& s) {
  if (s == "multiplicative") return DecaySchedule::Multiplicative;
  if (s == "additive") return DecaySchedule::Additive;
  throw ConfigError("config: adaptive.schedule must be 'multiplicative' or 'additive', got '" + s + "'");
}

NoisePrior prior_at(const Reader& r, const std::string& path) {
  const auto name = r.get<std::string>(path);
  try {
    return parse_prior(name);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + path + "' is not a known prior: '" + name + "'");
  }
}

ExperimentConfig from_tree(const json& input) {
  const json defaults = to_tree(ExperimentConfig{});
  reject_unknown(input, defaults, "");
  json full = defaults;
  merge(full, input);
  const Reader r(full);

  ExperimentConfig c;
  c.mesh = r.get<std::string>("scene.mesh");
  c.cube_side = r.get<double>("scene.cube_side");
  c.fan_triangulate = r.get<bool>("scene.fan_triangulate");
  c.rotation = r.vec3("scene.rotation");
  c.translation = r.vec3("scene.translation");

  c.fov_deg = r.get<double>("camera.fov_deg");
  c.camera.height = r.get<int>("camera.height");
  c.camera.width = r.get<int>("camera.width");
  c.camera.eye = r.vec3("camera.eye");
  c.camera.at = r.vec3("camera.at");
  c.camera.up = r.vec3("camera.up");
  c.camera.near = r.get<double>("camera.near");
  c.camera.far = r.get<double>("camera.far");
  c.camera.fov = c.fov_deg * std::numbers::pi / 180.0;

  c.light.enabled = r.get<bool>("light.enabled");
  c.light.direction = r.vec3("light.direction");
  c.light.ambient = r.get<double>("light.ambient");
  c.light.diffuse = r.get<double>("light.diffuse");

  c.render.background = r.vec3("render.background");
  c.render.mode = parse_mode(r.get<std::string>("render.mode"));
  c.render.estimator = parse_estimator(r.get<std::string>("render.estimator"));
  c.render.cull = r.get<bool>("render.cull");
  c.render.cull_sigmas = r.get<double>("render.cull_sigmas");
  c.render.squared_distance = r.get<bool>("render.squared_distance");
  c.render.occupancy_floor = r.get<double>("render.occupancy_floor");
  c.render.sample_budget = r.get<std::uint64_t>("render.sample_budget");

  c.smoothing.sigma = r.get<double>("smoothing.sigma");
  c.smoothing.gamma = r.get<double>("smoothing.gamma");
  c.smoothing.alpha = r.get<double>("smoothing.alpha");
  c.smoothing.samples = r.get<int>("smoothing.samples");
  c.smoothing.raster_prior = prior_at(r, "smoothing.raster_prior");
  c.smoothing.agg_prior = prior_at(r, "smoothing.agg_prior");

  c.adaptive = r.get<bool>("adaptive.enabled");
  c.controller.beta = r.get<double>("adaptive.beta");
  c.controller.decay = r.get<double>("adaptive.decay");
  c.controller.floor = r.get<double>("adaptive.floor");
  c.controller.schedule = parse_schedule(r.get<std::string>("adaptive.schedule"));
  c.controller.additive_step = r.get<double>("adaptive.additive_step");

  c.adam.lr = r.get<double>("optimizer.lr");
  c.adam.beta1 = r.get<double>("optimizer.beta1");
  c.adam.beta2 = r.get<double>("optimizer.beta2");
  c.adam.eps = r.get<double>("optimizer.eps");
  c.iterations = r.get<int>("optimizer.iterations");

  c.trials = r.get<int>("task.trials");
  c.perturbation_deg = r.node("task.perturbation_deg").is_number()
                           ? std::vector<double>{r.get<double>("task.perturbation_deg")}
                           : r.get<std::vector<double>>("task.perturbation_deg");
  c.threshold_deg = r.get<double>("task.threshold_deg");
  c.threshold_sweep = r.get<std::vector<double>>("task.threshold_sweep");
  if (!r.node("task.true_rotation").is_null()) c.true_rotation = r.vec3("task.true_rotation");

  c.render_sweep = r.get<std::vector<std::array<double, 2>>>("render_sweep");
  c.bench_samples = r.get<std::vector<int>>("bench.samples");
  c.bench_warmup = r.get<int>("bench.warmup");
  c.bench_repeats = r.get<int>("bench.repeats");

  c.seed = r.get<std::uint64_t>("seed");
  c.output = r.get<std::string>("output");
  c.threads = r.get<int>("threads");

  c.validate();
  return c;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("config: " + message);
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    resolved_camera().validate();
    smoothing.validate();
    controller.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  require(!mesh.empty(), "scene.mesh must not be empty");
  require(cube_side > 0.0, "scene.cube_side must be > 0");
  require(fov_deg > 0.0 && fov_deg < 180.0, "camera.fov_deg must be in (0, 180)");
  require(render.cull_sigmas > 0.0, "render.cull_sigmas must be > 0");
  require(render.occupancy_floor > 0.0 && render.occupancy_floor < 1.0, "render.occupancy_floor must be in (0, 1)");
  require(render.sample_budget > 0, "render.sample_budget must be > 0");
  for (int k = 0; k < 3; ++k) {
    require(render.background[k] >= 0.0 && render.background[k] <= 1.0, "render.background must be in [0, 1]");
  }
  require(light.ambient >= 0.0 && light.diffuse >= 0.0, "light.ambient and light.diffuse must be >= 0");
  require(light.direction.norm() > 0.0, "light.direction must be nonzero");
  require(adam.lr > 0.0, "optimizer.lr must be > 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "optimizer.beta1 must be in [0, 1)");
  require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "optimizer.beta2 must be in [0, 1)");
  require(adam.eps > 0.0, "optimizer.eps must be > 0");
  require(iterations >= 0, "optimizer.iterations must be >= 0");
  require(trials >= 0, "task.trials must be >= 0");
  require(!perturbation_deg.empty(), "task.perturbation_deg must not be empty");
  for (double p : perturbation_deg) require(p >= 0.0 && p <= 180.0, "task.perturbation_deg entries must be in [0, 180]");
  require(threshold_deg > 0.0, "task.threshold_deg must be > 0");
  for (double t : threshold_sweep) require(t > 0.0, "task.threshold_sweep entries must be > 0");
  for (const auto& sg : render_sweep) require(sg[0] >= 0.0 && sg[1] >= 0.0, "render_sweep entries must be >= 0");
  require(!bench_samples.empty(), "bench.samples must not be empty");
  for (int m : bench_samples) require(m >= 1, "bench.samples entries must be >= 1");
  require(bench_warmup >= 0, "bench.warmup must be >= 0");
  require(bench_repeats >= 1, "bench.repeats must be >= 1");
  require(!output.empty(), "output must not be empty");
  require(threads >= 0, "threads must be >= 0");
}

Camera ExperimentConfig::resolved_camera() const {
  Camera cam = camera;
  cam.fov = fov_deg * std::numbers::pi / 180.0;
  return cam;
}

Mesh ExperimentConfig::load_mesh() const {
  if (mesh == "cube") return make_cube(cube_side);
  if (!std::filesystem::exists(mesh)) throw ConfigError("mesh file not found: " + mesh);
  ObjOptions options;
  options.fan_triangulate = fan_triangulate;
  return load_obj(mesh, options);
}

PoseTaskConfig ExperimentConfig::pose_task(double perturbation) const {
  PoseTaskConfig t;
  t.mesh = load_mesh();
  t.camera = resolved_camera();
  t.light = light;
  t.render = render;
  t.smoothing = smoothing;
  t.adaptive = adaptive;
  t.controller = controller;
  t.adam = adam;
  t.iterations = iterations;
  t.trials = trials;
  t.perturbation_deg = perturbation;
  t.threshold_deg = threshold_deg;
  t.seed = seed;
  t.true_rotation = true_rotation;
  t.translation = translation;
  return t;
}

ExperimentConfig parse_config(std::string_view json_text) {
  json tree;
  try {
    tree = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return from_tree(tree);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_config(const ExperimentConfig& config) { return to_tree(config).dump(2); }

ExperimentConfig apply_overrides(const ExperimentConfig& config, const std::vector<std::string>& assignments) {
  json tree = to_tree(config);
  for (const std::string& a : assignments) {
    const std::size_t eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' must look like key=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    json* cur = &tree;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = key.find('.', start);
      const std::string part = key.substr(start, dot - start);
      if (!cur->is_object() || !cur->contains(part)) throw ConfigError("override: unknown key '" + key + "'");
      cur = &(*cur)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *cur = value;
  }
  return from_tree(tree);
}

}  // namespace pertrender
