#include "detservo/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "detservo/hashing.hpp"

namespace detservo {

Mat3 look_at_rotation(const Vec3& position, const Vec3& target) {
  const Vec3 z = (target - position).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitY().cross(z);
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

namespace {

Vec3 matrix_to_rpy(const Mat3& r) {
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  return {std::atan2(r(2, 1), r(2, 2)), pitch, std::atan2(r(1, 0), r(0, 0))};
}

kinematics::KinematicChain default_arm() {
  using kinematics::RevoluteJoint;
  const double lim = 2.8;
  std::vector<RevoluteJoint> j{
      {"shoulder_pitch", Pose::from_translation({0.0, -0.2, 0.05}), Vec3::UnitY(), -lim, lim},
      {"shoulder_roll", Pose::identity(), Vec3::UnitX(), -lim, lim},
      {"upper_arm_yaw", Pose::identity(), Vec3::UnitZ(), -lim, lim},
      {"elbow", Pose::from_translation({0.0, 0.0, -0.30}), Vec3::UnitY(), -2.6, 0.0},
      {"forearm_yaw", Pose::identity(), Vec3::UnitZ(), -lim, lim},
      {"wrist_pitch", Pose::from_translation({0.0, 0.0, -0.28}), Vec3::UnitY(), -lim, lim},
      {"wrist_roll", Pose::identity(), Vec3::UnitX(), -lim, lim},
  };
  return kinematics::KinematicChain(j, Pose::from_translation({0.0, 0.0, -0.06}));
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.rig.arm = default_arm();
  c.rig.arm_home.resize(7);
  c.rig.arm_home << -0.9, 0.0, 0.0, -1.4, 0.0, 0.5, 0.0;

  auto& head = c.rig.scene.head;
  head.camera.fx = head.camera.fy = 100.0;
  head.camera.cx = head.camera.cy = 31.5;
  head.camera.pose.translation = Vec3(0.10, -0.02, 0.24);
  head.camera.pose.rotation = look_at_rotation(head.camera.pose.translation, c.sampler.screw_nominal);
  auto& torso = c.rig.scene.torso;
  torso.fx = torso.fy = 80.0;
  torso.cx = torso.cy = 31.5;
  torso.pose.translation = Vec3(0.12, 0.14, -0.06);
  torso.pose.rotation = look_at_rotation(torso.pose.translation, c.sampler.screw_nominal);
  return c;
}

void ExperimentConfig::validate() const {
  rig.scene.head.camera.validate();
  rig.scene.torso.validate();
  rig.scene.noise.validate();
  sampler.validate();
  model.validate();
  optimizer.validate();
  servo.validate();
  const auto& hc = rig.scene.head.camera;
  const auto& tc = rig.scene.torso;
  if (hc.width != tc.width || hc.height != tc.height) throw std::invalid_argument("cameras must share an image size");
  if (model.image_height != hc.height || model.image_width != hc.width || model.channels != rig.scene.channels) {
    throw std::invalid_argument("model image shape does not match the cameras");
  }
  if (model.architecture == model::Architecture::kTransformer &&
      static_cast<std::size_t>(model.perception_heads) != bank.size()) {
    throw std::invalid_argument("model perception_heads does not match the head bank");
  }
  if (static_cast<std::size_t>(rig.arm_home.size()) != rig.arm.dof() || !rig.arm.within_bounds(rig.arm_home)) {
    throw std::invalid_argument("arm home configuration is missing or outside the joint bounds");
  }
  if (sampler.max_offset > bank.range()) throw std::invalid_argument("sampler max_offset exceeds the head bank range");
  if (!(loss.k > 0.0)) throw std::invalid_argument("loss k must be positive");
  if (!(sph_gain > 0.0)) throw std::invalid_argument("sph_gain must be positive");
  if (tolerances.size() != 3 || !(tolerances[0] > tolerances[1] && tolerances[1] > tolerances[2]) ||
      !(tolerances[2] > 0.0)) {
    throw std::invalid_argument("tolerances must be three strictly decreasing positive values");
  }
  if (trials < 0) throw std::invalid_argument("trials must be non-negative");
}

namespace {

/// Flat "section.key" -> value map that records which keys were consumed.
class Reader {
 public:
  explicit Reader(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) {
        throw std::invalid_argument("config key '" + section + "' must live inside a [section]");
      }
      for (const auto& [key, val] : body) values_[section + "." + key] = val.data();
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const auto it = values_.find(key);
    if (it == values_.end()) return;
    std::istringstream s(it->second);
    T v{};
    if constexpr (std::is_same_v<T, std::string>) {
      v = it->second;
    } else if (!(s >> v) || !(s >> std::ws).eof()) {
      throw std::invalid_argument("config key '" + key + "': cannot parse '" + it->second + "'");
    }
    out = v;
    values_.erase(it);
  }

  void get_bool(const std::string& key, bool& out) {
    std::string s;
    const bool present = values_.count(key) != 0;
    get(key, s);
    if (!present) return;
    if (s == "true" || s == "1") out = true;
    else if (s == "false" || s == "0") out = false;
    else throw std::invalid_argument("config key '" + key + "': expected true/false");
  }

  std::vector<double> get_list(const std::string& key, bool& present) {
    present = false;
    const auto it = values_.find(key);
    if (it == values_.end()) return {};
    std::istringstream s(it->second);
    std::vector<double> v;
    double x;
    while (s >> x) v.push_back(x);
    if (!(s.eof())) throw std::invalid_argument("config key '" + key + "': cannot parse '" + it->second + "'");
    values_.erase(it);
    present = true;
    return v;
  }

  void get_vec3(const std::string& key, Vec3& out) {
    bool present = false;
    const auto v = get_list(key, present);
    if (!present) return;
    if (v.size() != 3) throw std::invalid_argument("config key '" + key + "': expected three numbers");
    out = Vec3(v[0], v[1], v[2]);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void finish() const {
    if (!values_.empty()) throw std::invalid_argument("unknown config key '" + values_.begin()->first + "'");
  }

 private:
  std::map<std::string, std::string> values_;
};

void read_camera(Reader& r, const std::string& sec, scene::CameraModel& cam) {
  r.get(sec + ".fx", cam.fx);
  r.get(sec + ".fy", cam.fy);
  r.get(sec + ".cx", cam.cx);
  r.get(sec + ".cy", cam.cy);
  r.get(sec + ".width", cam.width);
  r.get(sec + ".height", cam.height);
  r.get_vec3(sec + ".position", cam.pose.translation);
  if (r.has(sec + ".look_at")) {
    Vec3 target;
    r.get_vec3(sec + ".look_at", target);
    cam.pose.rotation = look_at_rotation(cam.pose.translation, target);
  }
  if (r.has(sec + ".rpy")) {
    Vec3 rpy;
    r.get_vec3(sec + ".rpy", rpy);
    cam.pose.rotation = rpy_to_matrix(rpy);
  }
}

void read_arm(Reader& r, ExperimentConfig& c) {
  int n = static_cast<int>(c.rig.arm.dof());
  const bool redefine = r.has("arm.joints");
  r.get("arm.joints", n);
  if (n < 1) throw std::invalid_argument("arm.joints must be at least 1");
  std::vector<kinematics::RevoluteJoint> joints = c.rig.arm.joints();
  if (redefine) joints.assign(n, kinematics::RevoluteJoint{});
  for (int i = 0; i < n; ++i) {
    const std::string p = "arm.joint" + std::to_string(i) + "_";
    auto& j = joints[i];
    if (j.name.empty()) j.name = "joint" + std::to_string(i);
    r.get(p + "name", j.name);
    r.get_vec3(p + "axis", j.axis);
    Vec3 xyz = j.origin.translation;
    Vec3 rpy = matrix_to_rpy(j.origin.rotation);
    const bool has_rpy = r.has(p + "rpy");
    r.get_vec3(p + "xyz", xyz);
    r.get_vec3(p + "rpy", rpy);
    j.origin.translation = xyz;
    if (has_rpy) j.origin.rotation = rpy_to_matrix(rpy);
    r.get(p + "lower", j.lower);
    r.get(p + "upper", j.upper);
  }
  Pose flange = c.rig.arm.flange();
  Vec3 fxyz = flange.translation;
  r.get_vec3("arm.flange_xyz", fxyz);
  flange.translation = fxyz;
  if (r.has("arm.flange_rpy")) {
    Vec3 rpy;
    r.get_vec3("arm.flange_rpy", rpy);
    flange.rotation = rpy_to_matrix(rpy);
  }
  c.rig.arm = kinematics::KinematicChain(joints, flange);
  bool present = false;
  const auto home = r.get_list("arm.home", present);
  if (present) c.rig.arm_home = Eigen::Map<const Eigen::VectorXd>(home.data(), static_cast<Eigen::Index>(home.size()));
  if (r.has("arm.ee_rpy")) {
    Vec3 rpy;
    r.get_vec3("arm.ee_rpy", rpy);
    c.rig.nominal_ee_rotation = rpy_to_matrix(rpy);
  }
}

void read_heads(Reader& r, ExperimentConfig& c) {
  if (!r.has("heads.count")) return;
  int n = 0;
  r.get("heads.count", n);
  std::vector<mph::PerceptionHeadSpec> heads;
  for (int h = 0; h < n; ++h) {
    bool present = false;
    const auto v = r.get_list("heads.head" + std::to_string(h + 1), present);
    if (!present || v.size() != 5) {
      throw std::invalid_argument("heads.head" + std::to_string(h + 1) + " must list mu sigma alpha lo hi");
    }
    heads.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  c.bank = mph::HeadBank(heads);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c = default_config();
  Reader r(text);

  r.get("run.dir", c.run_dir);
  r.get("run.trials", c.trials);
  {
    bool present = false;
    const auto t = r.get_list("run.tolerances", present);
    if (present) c.tolerances = t;
  }
  r.get("run.data_seed", c.seeds.data);
  r.get("run.init_seed", c.seeds.init);
  r.get("run.train_seed", c.seeds.train);
  r.get("run.eval_seed", c.seeds.eval);

  read_arm(r, c);

  auto& head = c.rig.scene.head;
  read_camera(r, "head_camera", head.camera);
  r.get_vec3("head_camera.yaw_axis", head.yaw_axis);
  r.get_vec3("head_camera.pitch_axis", head.pitch_axis);
  r.get("head_camera.yaw_limit", head.yaw_limit);
  r.get("head_camera.pitch_limit", head.pitch_limit);
  read_camera(r, "torso_camera", c.rig.scene.torso);

  auto& look = c.rig.scene.look;
  r.get("render.channels", c.rig.scene.channels);
  r.get("render.background", look.background);
  r.get("render.screw_intensity", look.screw_intensity);
  r.get("render.slot_intensity", look.slot_intensity);
  r.get("render.tip_intensity", look.tip_intensity);
  r.get("render.screw_radius", look.screw_radius);
  r.get("render.tip_radius", look.tip_radius);
  r.get("render.slot_half_width", look.slot_half_width);
  r.get("render.supersample", look.supersample);
  r.get("noise.pixel_sigma", c.rig.scene.noise.pixel_sigma);
  r.get("noise.max_distractors", c.rig.scene.noise.max_distractors);

  auto& s = c.sampler;
  r.get("sampler.groups", s.groups);
  r.get("sampler.points_min", s.points_min);
  r.get("sampler.points_max", s.points_max);
  r.get_vec3("sampler.screw_nominal", s.screw_nominal);
  r.get_vec3("sampler.screw_jitter", s.screw_jitter);
  r.get_vec3("sampler.grasp_nominal", s.grasp_nominal);
  r.get("sampler.grasp_jitter", s.grasp_jitter);
  r.get("sampler.grasp_rotation_jitter", s.grasp_rotation_jitter);
  r.get("sampler.rotation_error_bound", s.rotation_error_bound);
  r.get("sampler.head_yaw_range", s.head_yaw_range);
  r.get("sampler.head_pitch_range", s.head_pitch_range);
  r.get("sampler.max_offset", s.max_offset);
  r.get("sampler.max_retries", s.max_retries);

  read_heads(r, c);
  r.get("heads.sph_gain", c.sph_gain);

  auto& m = c.model;
  std::string arch = model::to_string(m.architecture);
  r.get("model.architecture", arch);
  m.architecture = model::architecture_from_string(arch);
  m.image_height = c.rig.scene.head.camera.height;
  m.image_width = c.rig.scene.head.camera.width;
  m.channels = c.rig.scene.channels;
  r.get("model.token_grid", m.token_grid);
  {
    bool present = false;
    const auto ch = r.get_list("model.conv_channels", present);
    if (present) m.conv_channels.assign(ch.begin(), ch.end());
  }
  r.get("model.embed_dim", m.embed_dim);
  r.get("model.attention_heads", m.attention_heads);
  r.get("model.ffn_dim", m.ffn_dim);
  r.get("model.encoder_layers", m.encoder_layers);
  r.get("model.decoder_layers", m.decoder_layers);
  r.get("model.mlp_hidden", m.mlp_hidden);
  r.get("model.input_center", m.input_center);
  r.get("model.input_scale", m.input_scale);
  r.get("model.position_scale", m.position_scale);
  r.get("model.conv_init_gain", m.conv_init_gain);
  m.perception_heads = static_cast<int>(c.bank.size());

  r.get("loss.k", c.loss.k);

  auto& o = c.optimizer;
  r.get("train.learning_rate", o.learning_rate);
  r.get("train.beta1", o.beta1);
  r.get("train.beta2", o.beta2);
  r.get("train.eps", o.eps);
  r.get("train.weight_decay", o.weight_decay);
  r.get("train.batch_size", o.batch_size);
  r.get("train.epochs", o.epochs);
  r.get("train.close_range", o.close_range);

  auto& sv = c.servo;
  r.get("servo.estimate_rate", sv.estimate_rate);
  r.get("servo.control_rate", sv.control_rate);
  r.get("servo.kp", sv.kp);
  r.get("servo.max_duration", sv.max_duration);
  r.get("servo.dwell", sv.dwell);
  r.get("servo.settle_motion", sv.settle_motion);
  r.get("servo.oracle_noise", sv.oracle_noise);
  r.get("servo.ik_tolerance", sv.ik.tolerance);
  r.get("servo.ik_max_iterations", sv.ik.max_iterations);
  r.get("servo.orientation_weight", sv.ik.orientation_weight);
  sv.success_tolerance = c.tolerances.front();

  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

namespace {

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of negative zero
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(const Vec3& v) { return fmt(v.x()) + " " + fmt(v.y()) + " " + fmt(v.z()); }

void write_camera(std::ostream& o, const scene::CameraModel& cam) {
  o << "fx = " << fmt(cam.fx) << "\nfy = " << fmt(cam.fy) << "\ncx = " << fmt(cam.cx) << "\ncy = " << fmt(cam.cy)
    << "\nwidth = " << cam.width << "\nheight = " << cam.height << "\nposition = " << fmt(cam.pose.translation)
    << "\nrpy = " << fmt(matrix_to_rpy(cam.pose.rotation)) << '\n';
}

}  // namespace

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "[run]\ndir = " << c.run_dir << "\ntrials = " << c.trials << "\ntolerances = ";
  for (std::size_t i = 0; i < c.tolerances.size(); ++i) o << (i ? " " : "") << fmt(c.tolerances[i]);
  o << "\ndata_seed = " << c.seeds.data << "\ninit_seed = " << c.seeds.init << "\ntrain_seed = " << c.seeds.train
    << "\neval_seed = " << c.seeds.eval << "\n\n";

  o << "[arm]\njoints = " << c.rig.arm.dof() << '\n';
  for (std::size_t i = 0; i < c.rig.arm.dof(); ++i) {
    const auto& j = c.rig.arm.joints()[i];
    const std::string p = "joint" + std::to_string(i) + "_";
    o << p << "name = " << j.name << '\n'
      << p << "axis = " << fmt(j.axis) << '\n'
      << p << "xyz = " << fmt(j.origin.translation) << '\n'
      << p << "rpy = " << fmt(matrix_to_rpy(j.origin.rotation)) << '\n'
      << p << "lower = " << fmt(j.lower) << '\n'
      << p << "upper = " << fmt(j.upper) << '\n';
  }
  o << "flange_xyz = " << fmt(c.rig.arm.flange().translation) << "\nflange_rpy = "
    << fmt(matrix_to_rpy(c.rig.arm.flange().rotation)) << "\nhome =";
  for (Eigen::Index i = 0; i < c.rig.arm_home.size(); ++i) o << ' ' << fmt(c.rig.arm_home[i]);
  o << "\nee_rpy = " << fmt(matrix_to_rpy(c.rig.nominal_ee_rotation)) << "\n\n";

  const auto& head = c.rig.scene.head;
  o << "[head_camera]\n";
  write_camera(o, head.camera);
  o << "yaw_axis = " << fmt(head.yaw_axis) << "\npitch_axis = " << fmt(head.pitch_axis) << "\nyaw_limit = "
    << fmt(head.yaw_limit) << "\npitch_limit = " << fmt(head.pitch_limit) << "\n\n[torso_camera]\n";
  write_camera(o, c.rig.scene.torso);

  const auto& l = c.rig.scene.look;
  o << "\n[render]\nchannels = " << c.rig.scene.channels << "\nbackground = " << fmt(l.background)
    << "\nscrew_intensity = " << fmt(l.screw_intensity) << "\nslot_intensity = " << fmt(l.slot_intensity)
    << "\ntip_intensity = " << fmt(l.tip_intensity) << "\nscrew_radius = " << fmt(l.screw_radius)
    << "\ntip_radius = " << fmt(l.tip_radius) << "\nslot_half_width = " << fmt(l.slot_half_width)
    << "\nsupersample = " << l.supersample << "\n\n[noise]\npixel_sigma = " << fmt(c.rig.scene.noise.pixel_sigma)
    << "\nmax_distractors = " << c.rig.scene.noise.max_distractors << "\n\n";

  const auto& s = c.sampler;
  o << "[sampler]\ngroups = " << s.groups << "\npoints_min = " << s.points_min << "\npoints_max = " << s.points_max
    << "\nscrew_nominal = " << fmt(s.screw_nominal) << "\nscrew_jitter = " << fmt(s.screw_jitter)
    << "\ngrasp_nominal = " << fmt(s.grasp_nominal) << "\ngrasp_jitter = " << fmt(s.grasp_jitter)
    << "\ngrasp_rotation_jitter = " << fmt(s.grasp_rotation_jitter)
    << "\nrotation_error_bound = " << fmt(s.rotation_error_bound) << "\nhead_yaw_range = " << fmt(s.head_yaw_range)
    << "\nhead_pitch_range = " << fmt(s.head_pitch_range) << "\nmax_offset = " << fmt(s.max_offset)
    << "\nmax_retries = " << s.max_retries << "\n\n";

  o << "[heads]\ncount = " << c.bank.size() << '\n';
  for (std::size_t h = 0; h < c.bank.size(); ++h) {
    const auto& b = c.bank[h];
    o << "head" << h + 1 << " = " << fmt(b.mu) << ' ' << fmt(b.sigma) << ' ' << fmt(b.alpha) << ' ' << fmt(b.lo)
      << ' ' << fmt(b.hi) << '\n';
  }
  o << "sph_gain = " << fmt(c.sph_gain) << "\n\n";

  const auto& m = c.model;
  o << "[model]\narchitecture = " << model::to_string(m.architecture) << "\ntoken_grid = " << m.token_grid
    << "\nconv_channels =";
  for (int ch : m.conv_channels) o << ' ' << ch;
  o << "\nembed_dim = " << m.embed_dim << "\nattention_heads = " << m.attention_heads << "\nffn_dim = " << m.ffn_dim
    << "\nencoder_layers = " << m.encoder_layers << "\ndecoder_layers = " << m.decoder_layers
    << "\nmlp_hidden = " << m.mlp_hidden
    << "\ninput_center = " << fmt(m.input_center) << "\ninput_scale = " << fmt(m.input_scale)
    << "\nposition_scale = " << fmt(m.position_scale) << "\nconv_init_gain = " << fmt(m.conv_init_gain) << "\n\n[loss]\nk = " << fmt(c.loss.k) << "\n\n";

  const auto& op = c.optimizer;
  o << "[train]\nlearning_rate = " << fmt(op.learning_rate) << "\nbeta1 = " << fmt(op.beta1)
    << "\nbeta2 = " << fmt(op.beta2) << "\neps = " << fmt(op.eps) << "\nweight_decay = " << fmt(op.weight_decay)
    << "\nbatch_size = " << op.batch_size << "\nepochs = " << op.epochs << "\nclose_range = " << fmt(op.close_range)
    << "\n\n";

  const auto& sv = c.servo;
  o << "[servo]\nestimate_rate = " << fmt(sv.estimate_rate) << "\ncontrol_rate = " << fmt(sv.control_rate)
    << "\nkp = " << fmt(sv.kp) << "\nmax_duration = " << fmt(sv.max_duration) << "\ndwell = " << fmt(sv.dwell)
    << "\nsettle_motion = " << fmt(sv.settle_motion) << "\noracle_noise = " << fmt(sv.oracle_noise)
    << "\nik_tolerance = " << fmt(sv.ik.tolerance) << "\nik_max_iterations = " << sv.ik.max_iterations
    << "\norientation_weight = " << fmt(sv.ik.orientation_weight) << '\n';
  return o.str();
}

// The artifact directory is where a run lives, not what it computes.
std::uint64_t config_hash(const ExperimentConfig& config) {
  ExperimentConfig keyed = config;
  keyed.run_dir.clear();
  return hash64(to_ini(keyed));
}

}  // namespace detservo
