#pragma once

namespace vqarank {

constexpr const char* kVersion = "0.1.0";

}  // namespace vqarank
