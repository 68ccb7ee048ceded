#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

namespace mfbo::test {

/// Fresh scratch directory per test, under the build tree.
inline std::filesystem::path scratch_dir(const std::string& tag = {}) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = info ? std::string(info->test_suite_name()) + "." + info->name() : "scratch";
    if (!tag.empty()) name += "." + tag;
    const auto dir = std::filesystem::path(MFBO_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace mfbo::test
