// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmoe/core/tensor.hpp"
#include "lmoe/encoder/image.hpp"

namespace lmoe::bench {

// Planar pick-and-place in the unit square. The agent starts below a round
// obstacle; four objects sit in a row above it and the goal zone is at the
// top. Every task uses the same scene, so only the instruction tells them
// apart.
namespace world {
inline constexpr double kMaxSpeed = 0.05;       // workspace units per step at |a| = 1
inline constexpr double kGraspRadius = 0.08;
inline constexpr double kGoalTolerance = 0.05;
inline constexpr double kStyleThreshold = 0.5;
inline constexpr double kObstacleRadius = 0.08;
inline constexpr double kObstacleX = 0.5, kObstacleY = 0.42;
inline constexpr double kGoalX = 0.5, kGoalY = 0.93;
inline constexpr double kStartX = 0.5, kStartY = 0.1;
inline constexpr double kObjectY = 0.76;
inline constexpr double kObjectJitter = 0.02;
inline constexpr double kStartJitter = 0.03;
inline constexpr std::size_t kImageSize = 48;
inline constexpr std::size_t kHorizon = 64;
inline constexpr std::size_t kActionDim = 4;   // dx, dy, grip, style
inline constexpr std::size_t kProprioDim = 4;  // x, y, grip, held
inline constexpr std::size_t kObjects = 4;
}  // namespace world

enum class Shape2D { kSquare, kDisc, kTriangle, kBar };
enum class Style { kNone = 0, kLiftHook = 1, kDropInsert = -1 };

struct ObjectDescriptor {
  Shape2D shape;
  std::array<std::uint8_t, 3> color;
  double home_x;
};

struct TaskSpec {
  std::size_t task_id;
  std::string instruction;
  std::size_t target;  // index into the shared object row
  Style style;
};

const std::array<ObjectDescriptor, world::kObjects>& objects();
// The five benchmark tasks, in id order.
const std::vector<TaskSpec>& tasks();
std::vector<std::string> instruction_templates();

struct WorldState {
  double x = 0.0, y = 0.0;
  bool grip_closed = false;
  int held = -1;  // object index or -1
  std::array<double, world::kObjects> obj_x{}, obj_y{};
  // Episode bookkeeping.
  bool done = false;
  bool collided = false;
  int released = -1;
  double style_sum = 0.0;
  std::size_t style_steps = 0;
  std::size_t steps = 0;

  bool operator==(const WorldState&) const = default;
};

// Perturbed initial state; depends on the seed only, never on the task.
WorldState reset(std::uint64_t seed);

// Applies one action in raw units (each entry in [-1, 1]). Terminates on
// release or collision with the obstacle.
void step(WorldState& s, std::span<const double> action);

encoder::ObservationImage render(const WorldState& s);
Tensor proprio(const WorldState& s);  // [kProprioDim]

// Held-then-released target inside the goal zone, with the task's style.
bool success(const WorldState& s, const TaskSpec& task);

// Why a finished episode did or did not succeed.
enum class Outcome { kSuccess, kCollision, kTimeout, kWrongObject, kMissedGoal, kWrongStyle };
inline constexpr std::size_t kOutcomes = 6;
Outcome classify(const WorldState& s, const TaskSpec& task);
const char* outcome_name(Outcome o);

enum class DetourMode { kLeft = 0, kRight = 1 };

struct Step {
  encoder::ObservationImage image;
  Tensor proprio;
  Tensor action;  // raw units, [kActionDim]
};

struct Episode {
  std::string schema_version = "1";
  std::size_t task_id = 0;
  std::string instruction;
  std::uint64_t seed = 0;
  DetourMode mode = DetourMode::kLeft;
  std::vector<Step> steps;

  bool operator==(const Episode& o) const;
};

// Detour side is drawn from the seed, so both modes appear across seeds.
DetourMode detour_mode(std::uint64_t seed);

// Scripted expert: detour past the obstacle on the mode's side, grasp the
// target, carry it to the goal with the task's style, release.
class ExpertController {
 public:
  ExpertController(const TaskSpec& task, DetourMode mode);
  std::array<double, world::kActionDim> act(const WorldState& s);

 private:
  enum class Phase { kDetour, kApproach, kGrasp, kCarry, kRelease };
  TaskSpec task_;
  double side_;
  Phase phase_ = Phase::kDetour;
};

// Closed-loop scripted expert; nullopt when the rollout fails (collision or
// horizon exceeded). See generate_demo for the retry policy.
std::optional<Episode> scripted_demonstrator(const TaskSpec& task, std::uint64_t seed);

// Runs the demonstrator, moving to seed + 1 until an episode succeeds.
// `attempts` receives the number of seeds tried.
Episode generate_demo(const TaskSpec& task, std::uint64_t seed, std::size_t* attempts = nullptr);

// Replays an episode's actions from its seed; true iff the evaluator's
// success predicate holds at the end.
bool replay_succeeds(const Episode& ep);

}  // namespace lmoe::bench
