#pragma once

#include <string>

#include "stcalib/pipeline.hpp"
#include "stcalib/simulator.hpp"

namespace stcalib::io {

// Both parsers reject unknown keys at every nesting level and fall back to
// the in-code defaults for absent optional keys, so a config never silently
// diverges from what the library would do on its own.

// Required: id, board, cameras (two entries), duration, frame_rate.
// Optional: extrinsics, clock_shift, trajectory, pixel_noise, dropout, seed.
ScenarioSpec parse_scenario_config(const std::string& json_text);

// Every key optional; an empty object yields the library defaults.
CalibrationOptions parse_calibration_config(const std::string& json_text);

std::string read_text_file(const std::string& path);

}  // namespace stcalib::io
