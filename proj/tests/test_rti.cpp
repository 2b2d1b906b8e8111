#include <gtest/gtest.h>

#include "blocktr1/autodiff.hpp"
#include "blocktr1/rti.hpp"
#include "test_util.hpp"

using namespace blocktr1;

namespace {

OcpModel at_rest(OcpModel m) {
  m.x0_hat = m.x_ref;
  return m;
}

}  // namespace

TEST(Rti, SingleStepEqualsOneSqpIteration) {
  const OcpModel m = chain_of_masses(3, 10, 2.0);
  for (JacobianStrategy s : {JacobianStrategy::exact, JacobianStrategy::block_tr1_dynamic}) {
    RtiOptions ro;
    ro.strategy = s;
    ro.shift = false;
    RtiController ctrl(m, ro);
    ctrl.initialize(make_initial_iterate(m));
    const RtiStepResult r = ctrl.step(m.x0_hat);
    ASSERT_FALSE(r.failed);

    SqpOptions so;
    so.strategy = s;
    SqpSolver solver(m, so);
    solver.initialize(make_initial_iterate(m));
    solver.iterate();
    EXPECT_LE((ctrl.current().primal() - solver.current().primal()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((ctrl.current().dual() - solver.current().dual()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(r.u, solver.current().u[0]);
  }
}

TEST(Rti, SteadyStateIsFixedPoint) {
  const OcpModel m = at_rest(chain_of_masses(3, 10, 2.0));
  for (bool lifted : {false, true}) {
    RtiOptions ro;
    ro.lifted = lifted;
    RtiController ctrl(m, ro);
    ctrl.initialize(make_initial_iterate(m));
    for (int k = 0; k < 3; ++k) {
      const RtiStepResult r = ctrl.step(m.x_ref);
      ASSERT_FALSE(r.failed);
      EXPECT_LE(r.step_norm, 1e-8);
      EXPECT_LE((r.u - m.u_ref).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Rti, ClosedLoopAtRestStaysAtRest) {
  const OcpModel m = at_rest(chain_of_masses(3, 10, 2.0));
  RtiController ctrl(m, RtiOptions{});
  ctrl.initialize(make_initial_iterate(m));
  const ClosedLoopTrace tr = simulate_closed_loop(ctrl, m.x_ref, 5);
  ASSERT_FALSE(tr.aborted);
  for (const auto& s : tr.samples) {
    EXPECT_LE((s.x - m.x_ref).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_FALSE(s.violated);
  }
}

TEST(Rti, ClosedLoopReturnsToSteadyState) {
  const OcpModel m = chain_of_masses(3, 20, 4.0);
  RtiOptions o;
  o.strategy = JacobianStrategy::exact;
  RtiController ctrl(m, o);
  ctrl.initialize(make_initial_iterate(m));
  const ClosedLoopTrace tr = simulate_closed_loop(ctrl, m.x0_hat, 150);
  ASSERT_FALSE(tr.aborted) << tr.message;
  double settle = -1.0;
  for (const auto& s : tr.samples) {
    const bool near = (s.x - m.x_ref).cwiseAbs().maxCoeff() <= 1e-3;
    if (!near) settle = -1.0;
    if (near && settle < 0.0) settle = s.t;
  }
  ASSERT_GE(settle, 0.0);
  RecordProperty("settle_time", std::to_string(settle));
  EXPECT_LE(settle, 30.0);
}

TEST(Rti, DeterministicTraces) {
  const OcpModel m = chain_of_masses(3, 10, 2.0);
  auto run = [&] {
    RtiController ctrl(m, RtiOptions{});
    ctrl.initialize(make_initial_iterate(m));
    return trace_to_csv(simulate_closed_loop(ctrl, m.x0_hat, 6), false);
  };
  EXPECT_EQ(run(), run());
}

TEST(Rti, FeedbackPhaseDoesNoLinearization) {
  const OcpModel m = chain_of_masses(3, 10, 2.0);
  for (JacobianStrategy s : {JacobianStrategy::exact, JacobianStrategy::block_tr1_dynamic}) {
    SqpOptions so;
    so.strategy = s;
    SqpSolver solver(m, so);
    solver.initialize(make_initial_iterate(m));
    solver.prepare();
    ad_counters().reset();
    solver.feedback(m.x0_hat);
    EXPECT_EQ(ad_counters().forward_passes.load(), 0) << to_string(s);
    EXPECT_EQ(ad_counters().reverse_sweeps.load(), 0) << to_string(s);
  }
}

TEST(Rti, NameAndCounters) {
  const OcpModel m = chain_of_masses(3, 10, 2.0);
  RtiOptions ro;
  RtiController a(m, ro);
  EXPECT_EQ(a.name(), "shooting_block_tr1_dynamic");
  EXPECT_EQ(a.lifted_counters(), nullptr);
  ro.lifted = true;
  ro.strategy = JacobianStrategy::exact;
  RtiController b(m, ro);
  EXPECT_EQ(b.name(), "lifted_exact");
  EXPECT_NE(b.lifted_counters(), nullptr);
}

TEST(Rti, TraceCsvSchema) {
  const OcpModel m = testutil::scalar_linear_model(-1.0, 1.0, 4, 2.0);
  RtiController ctrl(m, RtiOptions{});
  ctrl.initialize(make_initial_iterate(m));
  const std::string csv = trace_to_csv(simulate_closed_loop(ctrl, m.x0_hat, 2));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,x0,u0,kkt,prep_ns,fb_ns,active_set_size,violated");
}

TEST(Rti, ShiftedActiveSetMovesRowsForward) {
  const OcpModel m = chain_of_masses(3, 4, 1.0);
  const std::vector<int> off = path_row_offsets(m);
  ASSERT_EQ(m.num_path_rows(3), m.num_path_rows(4));
  EXPECT_EQ(shift_active_set(m, {off[2] + 1, off[4]}), (std::vector<int>{off[1] + 1, off[3], off[4]}));
  EXPECT_EQ(shift_active_set(m, {off[1]}), std::vector<int>{});
}
