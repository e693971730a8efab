#include <gtest/gtest.h>

#include <sstream>

#include "inertia/components.hpp"
#include "inertia/synth.hpp"
#include "inertia/temporal.hpp"

using namespace inertia;

namespace {

Scenario scenario_from(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

std::size_t scenario_error_line(const std::string& text) {
  try {
    scenario_from(text);
  } catch (const ParseError& e) {
    return e.line() + 1000;  // offset so that line 0 is distinguishable from success
  }
  return 0;
}

double pipe_pressure_drop(const Network& net, const StateFrame& f, std::size_t e) {
  return *f.node_pressure[net.from_index(e)] - *f.node_pressure[net.to_index(e)];
}

// One flat pipe of the given length, fed at S at 60 bar with a demand at E.
Scenario long_pipe(double length, double demand_knm3h, std::size_t frames) {
  Scenario s;
  s.network = Network::from_elements({Element{"P1", ElementKind::pipe, "S", "E", PipeGeometry{length, 0.9, 1e-5, 0.0}}});
  s.frames = frames;
  s.schedule = {{"S", 0, SetpointKind::pressure, units::bar_to_pa(60.0)},
                {"E", 0, SetpointKind::inflow, -units::knm3h_to_m3s(demand_knm3h)}};
  return s;
}

}  // namespace

TEST(Synth, SteadyScenarioIsStationary) {
  const auto s = parse_scenario_file(INERTIA_FIXTURE_DIR "/steady.scenario");
  const auto frames = simulate(s);
  ASSERT_EQ(frames.size(), s.frames);
  const auto p1 = *s.network.element_index("P1");
  EXPECT_NEAR(units::m3s_to_knm3h(*frames[0].arc_flow[p1]), 500.0, 1e-9);
  for (std::size_t k = 1; k < frames.size(); ++k) {
    EXPECT_EQ(frames[k].timestamp - frames[k - 1].timestamp, std::chrono::seconds(180));
    EXPECT_EQ(frames[k].arc_flow, frames[0].arc_flow);
    EXPECT_EQ(frames[k].node_pressure, frames[0].node_pressure);
    const auto& g = s.network.element(p1).pipe();
    EXPECT_EQ(inertia_term(g, 0.8, 180.0, *frames[k - 1].arc_flow[p1], *frames[k].arc_flow[p1]), 0.0);
  }
}

TEST(Synth, StepMovesTheTreeFlowExactly) {
  auto s = inject_step(long_pipe(100e3, 300.0, 6), "P1", units::knm3h_to_m3s(80.0), 3);
  const auto frames = simulate(s);
  const auto& net = s.network;
  const auto& g = net.element(0).pipe();
  const double q2 = *frames[2].arc_flow[0], q3 = *frames[3].arc_flow[0];
  EXPECT_NEAR(units::m3s_to_knm3h(q3 - q2), 80.0, 1e-7);
  const double alpha = inertia_term(g, 0.8, 180.0, q2, q3);
  EXPECT_NEAR(alpha, 100e3 * 0.8 * (q3 - q2) / (g.area() * 180.0), 1e-9 * std::abs(alpha));

  // The solved pressures reproduce alpha + beta + gamma at every transient frame.
  const double scale = units::bar_to_pa(60.0);
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const double pl = *frames[k].node_pressure[net.from_index(0)], pr = *frames[k].node_pressure[net.to_index(0)];
    const double model = discretized_pressure_drop(g, s.gas, 0.8, 180.0, *frames[k - 1].arc_flow[0],
                                                   *frames[k].arc_flow[0], pl, pr);
    EXPECT_NEAR(pipe_pressure_drop(net, frames[k], 0), model, 10 * 1e-8 * scale) << "frame " << k;
  }
}

TEST(Synth, MassBalanceHoldsAtEveryNode) {
  auto s = parse_scenario_file(INERTIA_FIXTURE_DIR "/funnel.scenario");
  s.frames = 30;
  s.noise = 0.0;
  s.schedule.erase(std::remove_if(s.schedule.begin(), s.schedule.end(),
                                  [&](const ScheduleEntry& e) { return e.frame >= s.frames; }),
                   s.schedule.end());
  s = inject_step(std::move(s), "B54", units::knm3h_to_m3s(20.0), 10);
  s.valve_open["V3"] = true;
  const auto frames = simulate(s);
  const auto& net = s.network;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    std::vector<double> balance(net.nodes().size(), 0.0);
    for (std::size_t e = 0; e < net.elements().size(); ++e) {
      balance[net.from_index(e)] -= *frames[k].arc_flow[e];
      balance[net.to_index(e)] += *frames[k].arc_flow[e];
    }
    for (std::size_t i = 0; i < net.nodes().size(); ++i) {
      const auto& id = net.nodes()[i].id;
      if (id == "S") continue;  // pressure reference absorbs the imbalance
      const double inflow = setpoint_at(s, id, k).value_or(0.0);
      ASSERT_NEAR(balance[i] + inflow, 0.0, 1e-8) << "node " << id << " frame " << k;
    }
  }
}

TEST(Synth, OutputIsAFunctionOfTheScenario) {
  auto s = parse_scenario_file(INERTIA_FIXTURE_DIR "/funnel.scenario");
  s.frames = 12;
  s.schedule.erase(std::remove_if(s.schedule.begin(), s.schedule.end(),
                                  [&](const ScheduleEntry& e) { return e.frame >= s.frames; }),
                   s.schedule.end());
  const auto a = simulate(s);
  const auto b = simulate(s);
  EXPECT_EQ(a, b);
  s.seed += 1;
  EXPECT_NE(simulate(s), a);
}

TEST(Synth, ZeroStepLeavesScenarioUnchanged) {
  const auto s = long_pipe(100e3, 300.0, 4);
  EXPECT_EQ(inject_step(s, "P1", 0.0, 2).schedule, s.schedule);
  const auto t = inject_step(s, "P1", 1.0, 2);
  ASSERT_EQ(t.schedule.size(), 3u);
  EXPECT_EQ(setpoint_at(t, "E", 1), -units::knm3h_to_m3s(300.0));
  EXPECT_DOUBLE_EQ(*setpoint_at(t, "E", 2), -units::knm3h_to_m3s(300.0) - 1.0);
  EXPECT_THROW(inject_step(s, "P9", 1.0, 2), std::invalid_argument);
  EXPECT_THROW(inject_step(s, "P1", 1.0, 4), std::invalid_argument);
}

TEST(Synth, StepUpstreamOfTheReferenceAddsSupply) {
  // With the pressure reference at the far end, the step enters at the near end.
  Scenario s = long_pipe(50e3, 0.0, 3);
  s.schedule = {{"E", 0, SetpointKind::pressure, units::bar_to_pa(50.0)},
                {"S", 0, SetpointKind::inflow, units::knm3h_to_m3s(100.0)}};
  const auto t = inject_step(s, "P1", units::knm3h_to_m3s(25.0), 1);
  EXPECT_DOUBLE_EQ(*setpoint_at(t, "S", 1), units::knm3h_to_m3s(125.0));
  const auto frames = simulate(t);
  EXPECT_NEAR(units::m3s_to_knm3h(*frames[1].arc_flow[0] - *frames[0].arc_flow[0]), 25.0, 1e-7);
}

TEST(Synth, LongPipeStepIsHighAndOppositeStepsFormARunOfTwo) {
  // 200 km, 0.9 m: about 155 kNm3/h in one 180 s step yields 0.6 bar.
  const double dq = 155.0;
  auto s = long_pipe(200e3, 200.0, 8);
  s = inject_step(std::move(s), "P1", units::knm3h_to_m3s(dq), 4);
  s = inject_step(std::move(s), "P1", -units::knm3h_to_m3s(dq), 5);
  const auto frames = simulate(s);
  const auto& net = s.network;
  const ThresholdConfig cfg;
  std::vector<ComponentSummary> high;
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const auto pair = make_time_pair(frames[k - 1].timestamp, frames[k].timestamp);
    const double q0 = *frames[k - 1].arc_flow[0], q1 = *frames[k].arc_flow[0];
    if (!prefilter(q0, q1, cfg)) continue;
    const double alpha = inertia_term(net.element(0).pipe(), 0.8, 180.0, q0, q1);
    EXPECT_NEAR(std::abs(units::pa_to_bar(alpha)), 0.6, 0.01);
    const auto comps = analyze_pair(net, pair, {RelevantPipe{0, alpha, q1 - q0}}, frames[k - 1], frames[k], cfg);
    ASSERT_EQ(comps.size(), 1u);
    EXPECT_EQ(comps[0].relevance, RelevanceClass::high);
    high.push_back(summarize(comps[0], high.size()));
  }
  ASSERT_EQ(high.size(), 2u);
  const auto runs = pipe_run_lengths(high);
  ASSERT_EQ(runs.series.size(), 1u);
  EXPECT_EQ(runs.series[0].length, 2u);
}

TEST(Synth, ScenarioFileErrors) {
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\npressure.S = 60\nbogus = 1\n"), 1003u);
  EXPECT_EQ(scenario_error_line("pressure.S = 60\n"), 1000u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\ntopology = x.csv\n"), 1000u);
  EXPECT_EQ(scenario_error_line("fixture = nowhere\n"), 1000u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\nframes = 0\n"), 1002u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\npressure.S = sixty\n"), 1002u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\npressure.S@x = 60\n"), 1002u);
  EXPECT_EQ(scenario_error_line("fixture = trunkline50\nvalve.V3 = ajar\n"), 1002u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\njust text\n"), 1002u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\nnoise = 1.5\npressure.S = 60\n"), 1002u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\npressure.S = 60\ninflow.S@1 = 5\n"), 1000u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\npressure.S = 60\nstep.P1@3 = 5\n"), 1003u);
  EXPECT_EQ(scenario_error_line("fixture = single_pipe\nframes = 5\npressure.S = 60\nstep.P2@3 = 5\n"), 1004u);

  const auto s = scenario_from(
      "# comment\nfixture = single_pipe  # trailing\nframes = 4\ntau_s = 60\nstart = 2022-05-01T06:00:00Z\n"
      "pressure.S = 60\ninflow.E = -100\ninflow.E@2 = -150\nrho_n.P1 = 0.85\n");
  EXPECT_EQ(s.frames, 4u);
  EXPECT_EQ(s.tau, 60.0);
  EXPECT_EQ(s.density_of("P1"), 0.85);
  EXPECT_DOUBLE_EQ(*setpoint_at(s, "E", 1), -units::knm3h_to_m3s(100.0));
  EXPECT_DOUBLE_EQ(*setpoint_at(s, "E", 3), -units::knm3h_to_m3s(150.0));
  const auto frames = simulate(s);
  EXPECT_EQ(io::format_instant(frames[3].timestamp), "2022-05-01T06:03:00Z");
}

TEST(Synth, NonConvergenceNamesTheFrame) {
  auto s = inject_step(long_pipe(100e3, 300.0, 6), "P1", units::knm3h_to_m3s(400.0), 3);
  SolverSettings settings;
  settings.max_iterations = 1;
  try {
    simulate(s, settings);
    FAIL() << "expected a SimulationError";
  } catch (const SimulationError& e) {
    EXPECT_EQ(e.frame(), 3u);
    EXPECT_NE(std::string(e.what()).find("frame 3"), std::string::npos);
  }
}

TEST(Synth, SubnetworkWithoutPressureReferenceIsRejected) {
  Scenario s = long_pipe(100e3, 300.0, 2);
  s.schedule = {{"S", 0, SetpointKind::inflow, 1.0}, {"E", 0, SetpointKind::inflow, -1.0}};
  EXPECT_THROW(simulate(s), std::invalid_argument);

  auto t = parse_scenario_file(INERTIA_FIXTURE_DIR "/funnel.scenario");
  t.frames = 2;
  t.schedule.erase(std::remove_if(t.schedule.begin(), t.schedule.end(),
                                  [&](const ScheduleEntry& e) { return e.frame >= t.frames; }),
                   t.schedule.end());
  t.valve_open["V3"] = false;
  EXPECT_THROW(simulate(t), std::invalid_argument);
}
