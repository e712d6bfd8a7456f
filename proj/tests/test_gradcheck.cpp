#include <gtest/gtest.h>

#include <set>

#include "irisloc/gradcheck.hpp"

using namespace irisloc;

TEST(Gradcheck, EveryCasePasses) {
  GradcheckOptions opts;
  const auto report = run_gradcheck(opts);
  EXPECT_TRUE(report.passed());
  for (const auto& c : report.cases) {
    EXPECT_TRUE(c.passed) << c.name << " worst " << c.worst;
    EXPECT_LT(c.worst, opts.tolerance) << c.name;
    EXPECT_EQ(c.seeds, 10u) << c.name;
    EXPECT_GT(c.checked, 0u) << c.name;
    EXPECT_LE(static_cast<double>(c.skipped), opts.max_skip_fraction * static_cast<double>(c.checked)) << c.name;
  }
}

TEST(Gradcheck, CoversOpsLossesAndBothModels) {
  std::set<std::string> names;
  for (const auto& c : gradcheck::standard_cases()) names.insert(c.name);
  for (const char* n : {"conv2d", "maxpool2", "upsample_nearest2", "relu", "sigmoid", "concat_channels",
                        "coord_augment", "add", "weighted_sum", "dice_loss", "boundary_loss", "total_seg_loss",
                        "mse_loss", "unet-coord", "u2net-lite"})
    EXPECT_TRUE(names.count(n)) << n;
}

TEST(Gradcheck, InjectedFaultIsCaught) {
  GradcheckOptions opts;
  opts.seeds = 1;
  for (const char* name : {"conv2d", "sigmoid", "dice_loss", "unet-coord"}) {
    opts.fault_case = name;
    const auto report = run_gradcheck(opts);
    EXPECT_FALSE(report.passed()) << name;
    for (const auto& c : report.cases) EXPECT_EQ(c.passed, c.name != name) << c.name;
  }
}

TEST(Gradcheck, OnlyPiecewiseCasesSkip) {
  GradcheckOptions opts;
  opts.seeds = 3;
  for (const auto& c : run_gradcheck(opts).cases) {
    if (c.name == "unet-coord" || c.name == "u2net-lite") continue;
    EXPECT_EQ(c.skipped, 0u) << c.name;
  }
}
