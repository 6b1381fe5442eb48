#pragma once

#define PREMIA_VERSION "0.1.0"

namespace premia {

inline const char* version() { return PREMIA_VERSION; }

}  // namespace premia
