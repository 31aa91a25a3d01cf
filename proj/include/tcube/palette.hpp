#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace tcube {

// Fixed colour cycle shared by the SOM map and class map renderings.
inline constexpr std::array<std::array<std::uint8_t, 3>, 12> kPalette{{{31, 119, 180},
                                                                {255, 127, 14},
                                                                {44, 160, 44},
                                                                {214, 39, 40},
                                                                {148, 103, 189},
                                                                {140, 86, 75},
                                                                {227, 119, 194},
                                                                {127, 127, 127},
                                                                {188, 189, 34},
                                                                {23, 190, 207},
                                                                {255, 187, 120},
                                                                {152, 223, 138}}};

inline const std::array<std::uint8_t, 3>& palette_color(std::size_t i) { return kPalette[i % kPalette.size()]; }

}  // namespace tcube
