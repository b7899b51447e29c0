#include "stcalib/io/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "stcalib/errors.hpp"

namespace stcalib::io {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& message) {
  throw ParseError(where + ": " + message);
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) {
    fail(where, "expected an object");
  }
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      fail(where, "unknown key \"" + it.key() + "\"");
    }
  }
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    fail(where, std::string("missing key \"") + key + "\"");
  }
  return obj.at(key);
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) {
    fail(where, "expected a number");
  }
  return v.get<double>();
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) {
    fail(where, "expected an integer");
  }
  return v.get<int>();
}

double number_or(const json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key)) {
    return fallback;
  }
  return as_number(obj.at(key), where + "." + key);
}

int int_or(const json& obj, const char* key, int fallback, const std::string& where) {
  if (!obj.contains(key)) {
    return fallback;
  }
  return as_int(obj.at(key), where + "." + key);
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) {
    fail(where, "expected a string");
  }
  return v.get<std::string>();
}

BoardSpec parse_board(const json& obj, const std::string& where) {
  check_keys(obj, {"layout", "rows", "cols", "spacing"}, where);
  if (obj.contains("layout")) {
    const std::string layout = as_string(obj.at("layout"), where + ".layout");
    if (layout != "asymmetric") {
      fail(where + ".layout", "only \"asymmetric\" grids are supported");
    }
  }
  BoardSpec board;
  board.rows = as_int(require_key(obj, "rows", where), where + ".rows");
  board.cols = as_int(require_key(obj, "cols", where), where + ".cols");
  board.spacing = as_number(require_key(obj, "spacing", where), where + ".spacing");
  return board;
}

CameraIntrinsics parse_intrinsics(const json& obj, const std::string& where) {
  check_keys(obj, {"fx", "fy", "cx", "cy", "width", "height", "distortion"}, where);
  CameraIntrinsics intr;
  intr.fx = as_number(require_key(obj, "fx", where), where + ".fx");
  intr.fy = as_number(require_key(obj, "fy", where), where + ".fy");
  intr.cx = as_number(require_key(obj, "cx", where), where + ".cx");
  intr.cy = as_number(require_key(obj, "cy", where), where + ".cy");
  intr.width = as_int(require_key(obj, "width", where), where + ".width");
  intr.height = as_int(require_key(obj, "height", where), where + ".height");
  if (obj.contains("distortion")) {
    const json& d = obj.at("distortion");
    if (!d.is_array() || d.size() != 4) {
      fail(where + ".distortion", "expected [k1, k2, p1, p2]");
    }
    intr.distortion.k1 = as_number(d[0], where + ".distortion[0]");
    intr.distortion.k2 = as_number(d[1], where + ".distortion[1]");
    intr.distortion.p1 = as_number(d[2], where + ".distortion[2]");
    intr.distortion.p2 = as_number(d[3], where + ".distortion[3]");
  }
  return intr;
}

std::vector<SinusoidTerm> parse_terms(const json& arr, const std::string& where) {
  if (!arr.is_array()) {
    fail(where, "expected an array of sinusoid terms");
  }
  std::vector<SinusoidTerm> terms;
  for (size_t i = 0; i < arr.size(); ++i) {
    const std::string term_where = where + "[" + std::to_string(i) + "]";
    check_keys(arr[i], {"amplitude", "frequency_hz", "phase"}, term_where);
    SinusoidTerm term;
    term.amplitude =
        as_number(require_key(arr[i], "amplitude", term_where), term_where + ".amplitude");
    term.frequency_hz =
        as_number(require_key(arr[i], "frequency_hz", term_where), term_where + ".frequency_hz");
    term.phase = number_or(arr[i], "phase", 0.0, term_where);
    terms.push_back(term);
  }
  return terms;
}

void parse_axis_terms(const json& obj, const char* key,
                      std::array<std::vector<SinusoidTerm>, 3>& out, const std::string& where) {
  if (!obj.contains(key)) {
    return;
  }
  const json& arr = obj.at(key);
  const std::string axis_where = where + "." + key;
  if (!arr.is_array() || arr.size() != 3) {
    fail(axis_where, "expected one term array per axis");
  }
  for (int axis = 0; axis < 3; ++axis) {
    out[static_cast<size_t>(axis)] =
        parse_terms(arr[static_cast<size_t>(axis)], axis_where + "[" + std::to_string(axis) + "]");
  }
}

Eigen::Vector3d parse_vec3(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) {
    fail(where, "expected [x, y, z]");
  }
  return {as_number(v[0], where + "[0]"), as_number(v[1], where + "[1]"),
          as_number(v[2], where + "[2]")};
}

Rotation parse_quaternion(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) {
    fail(where, "expected [w, x, y, z]");
  }
  try {
    return Rotation::from_quaternion(as_number(v[0], where + "[0]"), as_number(v[1], where + "[1]"),
                                     as_number(v[2], where + "[2]"),
                                     as_number(v[3], where + "[3]"));
  } catch (const Error& e) {
    fail(where, e.what());
  }
}

}  // namespace

ScenarioSpec parse_scenario_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario config: ") + e.what());
  }
  const std::string where = "scenario config";
  check_keys(root,
             {"id", "board", "cameras", "extrinsics", "clock_shift", "trajectory", "duration",
              "frame_rate", "pixel_noise", "dropout", "seed"},
             where);

  ScenarioSpec spec;
  spec.id = as_string(require_key(root, "id", where), where + ".id");
  spec.board = parse_board(require_key(root, "board", where), where + ".board");

  const json& cameras = require_key(root, "cameras", where);
  if (!cameras.is_array() || cameras.size() != 2) {
    fail(where + ".cameras", "expected exactly two camera entries");
  }
  for (int c = 0; c < 2; ++c) {
    spec.intrinsics[static_cast<size_t>(c)] = parse_intrinsics(
        cameras[static_cast<size_t>(c)], where + ".cameras[" + std::to_string(c) + "]");
  }

  if (root.contains("extrinsics")) {
    const json& extr = root.at("extrinsics");
    const std::string extr_where = where + ".extrinsics";
    check_keys(extr, {"rotation_wxyz", "translation"}, extr_where);
    if (extr.contains("rotation_wxyz")) {
      spec.extrinsic_rotation =
          parse_quaternion(extr.at("rotation_wxyz"), extr_where + ".rotation_wxyz");
    }
    if (extr.contains("translation")) {
      spec.extrinsic_translation = parse_vec3(extr.at("translation"), extr_where + ".translation");
    }
  }

  spec.clock_shift = number_or(root, "clock_shift", spec.clock_shift, where);

  if (root.contains("trajectory")) {
    const json& traj = root.at("trajectory");
    const std::string traj_where = where + ".trajectory";
    check_keys(traj, {"standoff", "position", "orientation"}, traj_where);
    spec.trajectory.standoff = number_or(traj, "standoff", spec.trajectory.standoff, traj_where);
    parse_axis_terms(traj, "position", spec.trajectory.position, traj_where);
    parse_axis_terms(traj, "orientation", spec.trajectory.orientation, traj_where);
  }

  spec.duration = as_number(require_key(root, "duration", where), where + ".duration");
  spec.frame_rate_hz = as_number(require_key(root, "frame_rate", where), where + ".frame_rate");
  spec.pixel_noise_sigma = number_or(root, "pixel_noise", spec.pixel_noise_sigma, where);

  if (root.contains("dropout")) {
    const json& drop = root.at("dropout");
    const std::string drop_where = where + ".dropout";
    check_keys(drop, {"rate", "oblique_cutoff_deg"}, drop_where);
    spec.dropout.bernoulli_rate = number_or(drop, "rate", spec.dropout.bernoulli_rate, drop_where);
    spec.dropout.oblique_cutoff_deg =
        number_or(drop, "oblique_cutoff_deg", spec.dropout.oblique_cutoff_deg, drop_where);
  }

  if (root.contains("seed")) {
    const json& seed = root.at("seed");
    if (!seed.is_number_integer() ||
        (!seed.is_number_unsigned() && seed.get<int64_t>() < 0)) {
      fail(where + ".seed", "expected a non-negative integer");
    }
    spec.seed = seed.get<uint64_t>();
  }

  try {
    spec.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return spec;
}

CalibrationOptions parse_calibration_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("calibration config: ") + e.what());
  }
  const std::string where = "calibration config";
  check_keys(root,
             {"association_threshold_px", "max_prediction_offset", "knot_spacing", "max_pose_gap",
              "min_run_length", "huber_delta_px", "offset_bound", "offset_grid_step",
              "offset_refine_halfwidth", "offset_box_halfwidth", "max_iterations"},
             where);

  CalibrationOptions options;
  options.association_threshold_px =
      number_or(root, "association_threshold_px", options.association_threshold_px, where);
  options.max_prediction_offset =
      int_or(root, "max_prediction_offset", options.max_prediction_offset, where);
  options.knot_spacing = number_or(root, "knot_spacing", options.knot_spacing, where);
  options.max_pose_gap = number_or(root, "max_pose_gap", options.max_pose_gap, where);
  options.min_run_length = int_or(root, "min_run_length", options.min_run_length, where);
  options.huber_delta_px = number_or(root, "huber_delta_px", options.huber_delta_px, where);
  options.offset_bound = number_or(root, "offset_bound", options.offset_bound, where);
  options.offset_grid_step =
      number_or(root, "offset_grid_step", options.offset_grid_step, where);
  options.offset_refine_halfwidth =
      number_or(root, "offset_refine_halfwidth", options.offset_refine_halfwidth, where);
  options.offset_box_halfwidth =
      number_or(root, "offset_box_halfwidth", options.offset_box_halfwidth, where);
  options.max_iterations = int_or(root, "max_iterations", options.max_iterations, where);

  try {
    options.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return options;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(path + ": cannot open file");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace stcalib::io
