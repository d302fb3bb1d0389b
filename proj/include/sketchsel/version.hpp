#pragma once

namespace sketchsel {

inline constexpr char library_version[] = "0.1.0";

}  // namespace sketchsel
