// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/world.hpp"

#include <algorithm>
#include <cmath>

#include "lmoe/core/error.hpp"
#include "lmoe/core/rng.hpp"

namespace lmoe::bench {
namespace {

using namespace world;

constexpr double kDemoSpeed = 0.045;
constexpr double kDetourOffset = 0.25;
constexpr double kObjectHalf = 0.04;
constexpr double kAgentRadius = 0.03;

// Renderer palette: every channel is an exact q / 255.
using Rgb = std::array<std::uint8_t, 3>;
constexpr Rgb kBackground{224, 224, 208};
constexpr Rgb kObstacle{64, 64, 72};
constexpr Rgb kGoal{96, 192, 96};
constexpr Rgb kAgentOpen{255, 255, 255};
constexpr Rgb kAgentClosed{255, 208, 0};

double hypot2(double dx, double dy) { return std::sqrt(dx * dx + dy * dy); }

bool inside(Shape2D shape, double dx, double dy) {
  switch (shape) {
    case Shape2D::kSquare:
      return std::abs(dx) <= kObjectHalf && std::abs(dy) <= kObjectHalf;
    case Shape2D::kDisc:
      return hypot2(dx, dy) <= kObjectHalf;
    case Shape2D::kTriangle:  // apex up
      return dy >= -kObjectHalf && dy <= kObjectHalf &&
             std::abs(dx) <= (kObjectHalf - dy) * 0.5;
    case Shape2D::kBar:
      return std::abs(dx) <= kObjectHalf * 0.4 && std::abs(dy) <= kObjectHalf * 1.2;
  }
  return false;
}

}  // namespace

const std::array<ObjectDescriptor, kObjects>& objects() {
  static const std::array<ObjectDescriptor, kObjects> kObjs{{
      {Shape2D::kSquare, {208, 48, 48}, 0.2},
      {Shape2D::kDisc, {208, 48, 48}, 0.4},
      {Shape2D::kTriangle, {208, 48, 48}, 0.6},
      {Shape2D::kBar, {48, 80, 208}, 0.8},
  }};
  return kObjs;
}

const std::vector<TaskSpec>& tasks() {
  static const std::vector<TaskSpec> kTasks{
      {0, "pick up the red cube and place it in the green zone", 0, Style::kNone},
      {1, "pick up the red ball and place it in the green zone", 1, Style::kNone},
      {2, "pick up the red cone and place it in the green zone", 2, Style::kNone},
      {3, "lift the blue rod and hook it onto the green zone", 3, Style::kLiftHook},
      {4, "drop the blue rod and insert it into the green zone", 3, Style::kDropInsert},
  };
  return kTasks;
}

std::vector<std::string> instruction_templates() {
  std::vector<std::string> out;
  for (const auto& t : tasks()) out.push_back(t.instruction);
  return out;
}

WorldState reset(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x3017d));
  WorldState s;
  s.x = kStartX + rng.uniform(-kStartJitter, kStartJitter);
  s.y = kStartY + rng.uniform(-kStartJitter, kStartJitter);
  for (std::size_t i = 0; i < kObjects; ++i) {
    s.obj_x[i] = objects()[i].home_x + rng.uniform(-kObjectJitter, kObjectJitter);
    s.obj_y[i] = kObjectY + rng.uniform(-kObjectJitter, kObjectJitter);
  }
  return s;
}

void step(WorldState& s, std::span<const double> action) {
  if (action.size() != kActionDim) throw InvalidInput("world step: action must have 4 entries");
  if (s.done) return;
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };
  const bool was_holding = s.held >= 0;
  if (was_holding) {
    s.style_sum += clip(action[3]);
    ++s.style_steps;
  }
  s.x = std::clamp(s.x + kMaxSpeed * clip(action[0]), 0.0, 1.0);
  s.y = std::clamp(s.y + kMaxSpeed * clip(action[1]), 0.0, 1.0);
  const bool close = action[2] > 0.0;
  if (close && !s.grip_closed && s.held < 0) {
    int best = -1;
    double best_d = kGraspRadius;
    for (std::size_t i = 0; i < kObjects; ++i) {
      const double d = hypot2(s.obj_x[i] - s.x, s.obj_y[i] - s.y);
      if (d <= best_d) {
        best = static_cast<int>(i);
        best_d = d;
      }
    }
    s.held = best;
  }
  if (!close && s.grip_closed && s.held >= 0) {
    s.released = s.held;
    s.held = -1;
    s.done = true;
  }
  s.grip_closed = close;
  if (s.held >= 0) {
    s.obj_x[s.held] = s.x;
    s.obj_y[s.held] = s.y;
  }
  ++s.steps;
  if (hypot2(s.x - kObstacleX, s.y - kObstacleY) < kObstacleRadius) {
    s.collided = true;
    s.done = true;
  }
  if (s.steps >= kHorizon) s.done = true;
}

encoder::ObservationImage render(const WorldState& s) {
  encoder::ObservationImage img(kImageSize, kImageSize);
  const double n = static_cast<double>(kImageSize);
  const auto& objs = objects();
  for (std::size_t py = 0; py < kImageSize; ++py) {
    for (std::size_t px = 0; px < kImageSize; ++px) {
      const double u = (static_cast<double>(px) + 0.5) / n;
      const double v = 1.0 - (static_cast<double>(py) + 0.5) / n;
      Rgb c = kBackground;
      if (std::abs(u - kGoalX) <= kGoalTolerance * 1.6 &&
          std::abs(v - kGoalY) <= kGoalTolerance * 1.2) {
        c = kGoal;
      }
      if (hypot2(u - kObstacleX, v - kObstacleY) <= kObstacleRadius) c = kObstacle;
      for (std::size_t i = 0; i < kObjects; ++i) {
        if (static_cast<int>(i) == s.held) continue;
        if (inside(objs[i].shape, u - s.obj_x[i], v - s.obj_y[i])) c = objs[i].color;
      }
      if (hypot2(u - s.x, v - s.y) <= kAgentRadius) c = s.grip_closed ? kAgentClosed : kAgentOpen;
      if (s.held >= 0 && inside(objs[s.held].shape, (u - s.x) * 2.0, (v - s.y) * 2.0)) {
        c = objs[s.held].color;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(py, px, ch) = c[ch] / 255.0;
    }
  }
  return img;
}

Tensor proprio(const WorldState& s) {
  return Tensor::vector({2.0 * s.x - 1.0, 2.0 * s.y - 1.0, s.grip_closed ? 1.0 : -1.0,
                         s.held >= 0 ? 1.0 : -1.0});
}

bool success(const WorldState& s, const TaskSpec& task) {
  if (s.collided || s.released != static_cast<int>(task.target)) return false;
  const double d = hypot2(s.obj_x[task.target] - kGoalX, s.obj_y[task.target] - kGoalY);
  if (d >= kGoalTolerance) return false;
  const double style =
      s.style_steps == 0 ? 0.0 : s.style_sum / static_cast<double>(s.style_steps);
  switch (task.style) {
    case Style::kNone:
      return std::abs(style) < kStyleThreshold;
    case Style::kLiftHook:
      return style >= kStyleThreshold;
    case Style::kDropInsert:
      return style <= -kStyleThreshold;
  }
  return false;
}

Outcome classify(const WorldState& s, const TaskSpec& task) {
  if (success(s, task)) return Outcome::kSuccess;
  if (s.collided) return Outcome::kCollision;
  if (s.released < 0) return Outcome::kTimeout;
  if (s.released != static_cast<int>(task.target)) return Outcome::kWrongObject;
  if (hypot2(s.obj_x[task.target] - kGoalX, s.obj_y[task.target] - kGoalY) >= kGoalTolerance) {
    return Outcome::kMissedGoal;
  }
  return Outcome::kWrongStyle;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kCollision: return "collision";
    case Outcome::kTimeout: return "timeout";
    case Outcome::kWrongObject: return "wrong_object";
    case Outcome::kMissedGoal: return "missed_goal";
    case Outcome::kWrongStyle: return "wrong_style";
  }
  return "unknown";
}

bool Episode::operator==(const Episode& o) const {
  if (schema_version != o.schema_version || task_id != o.task_id ||
      instruction != o.instruction || seed != o.seed || mode != o.mode ||
      steps.size() != o.steps.size()) {
    return false;
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!(steps[i].image.pixels == o.steps[i].image.pixels) ||
        !(steps[i].proprio == o.steps[i].proprio) || !(steps[i].action == o.steps[i].action)) {
      return false;
    }
  }
  return true;
}

DetourMode detour_mode(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xde7002));
  return rng.uniform() < 0.5 ? DetourMode::kLeft : DetourMode::kRight;
}

ExpertController::ExpertController(const TaskSpec& task, DetourMode mode)
    : task_(task), side_(mode == DetourMode::kLeft ? -1.0 : 1.0) {}

std::array<double, kActionDim> ExpertController::act(const WorldState& s) {
  const double style = static_cast<double>(static_cast<int>(task_.style));
  std::array<double, kActionDim> a{0.0, 0.0, -1.0, 0.0};
  auto move_to = [&](double tx, double ty) {
    const double dx = tx - s.x, dy = ty - s.y;
    const double d = hypot2(dx, dy);
    const double k = d <= kDemoSpeed ? 1.0 : kDemoSpeed / d;
    a[0] = dx * k / kMaxSpeed;
    a[1] = dy * k / kMaxSpeed;
    return d <= kDemoSpeed;
  };
  switch (phase_) {
    case Phase::kDetour:
      if (move_to(kObstacleX + side_ * kDetourOffset, kObstacleY)) phase_ = Phase::kApproach;
      break;
    case Phase::kApproach:
      if (move_to(s.obj_x[task_.target], s.obj_y[task_.target])) phase_ = Phase::kGrasp;
      break;
    case Phase::kGrasp:
      a[2] = 1.0;
      a[3] = style;
      phase_ = Phase::kCarry;
      break;
    case Phase::kCarry:
      a[2] = 1.0;
      a[3] = style;
      if (move_to(kGoalX, kGoalY)) phase_ = Phase::kRelease;
      break;
    case Phase::kRelease:
      a[3] = style;
      break;
  }
  return a;
}

std::optional<Episode> scripted_demonstrator(const TaskSpec& task, std::uint64_t seed) {
  WorldState s = reset(seed);
  Episode ep;
  ep.task_id = task.task_id;
  ep.instruction = task.instruction;
  ep.seed = seed;
  ep.mode = detour_mode(seed);
  ExpertController expert(task, ep.mode);
  while (!s.done) {
    const auto a = expert.act(s);
    ep.steps.push_back({render(s), proprio(s), Tensor::vector({a.begin(), a.end()})});
    step(s, a);
  }
  if (!success(s, task)) return std::nullopt;
  return ep;
}

Episode generate_demo(const TaskSpec& task, std::uint64_t seed, std::size_t* attempts) {
  constexpr std::size_t kMaxAttempts = 1000;
  for (std::size_t i = 0; i < kMaxAttempts; ++i) {
    if (auto ep = scripted_demonstrator(task, seed + i)) {
      if (attempts) *attempts = i + 1;
      return *ep;
    }
  }
  throw InvariantViolation("demonstrator failed on " + std::to_string(kMaxAttempts) +
                           " consecutive seeds");
}

bool replay_succeeds(const Episode& ep) {
  if (ep.task_id >= tasks().size()) return false;
  WorldState s = reset(ep.seed);
  for (const auto& st : ep.steps) {
    if (s.done) return false;
    step(s, st.action.span());
  }
  return s.done && success(s, tasks()[ep.task_id]);
}

}  // namespace lmoe::bench
