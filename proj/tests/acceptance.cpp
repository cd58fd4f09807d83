// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "voxfield/selftest.hpp"

#include <cstdio>

int main() {
    using namespace voxfield::selftest;
    bool ok = true;
    auto report = [&](const CheckResult& r) {
        ok = ok && r.pass;
        std::printf("%s\n", format_result(r).c_str());
        std::fflush(stdout);
    };
    report(check_distloss_oracle());
    report(check_distloss_gradient());
    report(check_distloss_scaling());
    report(check_adam());
    report(check_tv());
    report(check_render_gradient());
    report(check_contraction());
    report(check_compositing());
    for (const CheckResult& r : check_scene_recovery({}, [](const std::string& s) { std::printf("  %s\n", s.c_str()); }))
        report(r);
    std::printf("acceptance: %s\n", ok ? "all criteria passed" : "some criteria FAILED");
    return ok ? 0 : 1;
}
