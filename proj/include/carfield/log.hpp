#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace carfield {
namespace logx {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

// Level comes from the CARFIELD_LOG environment variable (debug, info,
// warn, error). Default is info.
inline Level threshold() {
  static Level lvl = [] {
    const char* env = std::getenv("CARFIELD_LOG");
    if (env == nullptr) return Level::kInfo;
    if (std::strcmp(env, "debug") == 0) return Level::kDebug;
    if (std::strcmp(env, "info") == 0) return Level::kInfo;
    if (std::strcmp(env, "warn") == 0) return Level::kWarn;
    if (std::strcmp(env, "error") == 0) return Level::kError;
    return Level::kInfo;
  }();
  return lvl;
}

inline bool enabled(Level lvl) { return static_cast<int>(lvl) >= static_cast<int>(threshold()); }

inline void vwrite(Level lvl, const char* fmt, va_list args) {
  if (!enabled(lvl)) return;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::fprintf(stderr, "[%s] ", names[static_cast<int>(lvl)]);
  std::vfprintf(stderr, fmt, args);
  std::fputc('\n', stderr);
}

#if defined(__GNUC__)
#define CARFIELD_PRINTF_ATTR __attribute__((format(printf, 1, 2)))
#else
#define CARFIELD_PRINTF_ATTR
#endif

inline void debug(const char* fmt, ...) CARFIELD_PRINTF_ATTR;
inline void info(const char* fmt, ...) CARFIELD_PRINTF_ATTR;
inline void warn(const char* fmt, ...) CARFIELD_PRINTF_ATTR;
inline void error(const char* fmt, ...) CARFIELD_PRINTF_ATTR;

inline void debug(const char* fmt, ...) {
  va_list a;
  va_start(a, fmt);
  vwrite(Level::kDebug, fmt, a);
  va_end(a);
}
inline void info(const char* fmt, ...) {
  va_list a;
  va_start(a, fmt);
  vwrite(Level::kInfo, fmt, a);
  va_end(a);
}
inline void warn(const char* fmt, ...) {
  va_list a;
  va_start(a, fmt);
  vwrite(Level::kWarn, fmt, a);
  va_end(a);
}
inline void error(const char* fmt, ...) {
  va_list a;
  va_start(a, fmt);
  vwrite(Level::kError, fmt, a);
  va_end(a);
}

#undef CARFIELD_PRINTF_ATTR

}  // namespace logx

// strf: tiny printf-to-string helper (gcc 11 has no std::format).
inline std::string strf(const char* fmt, ...) {
  va_list a;
  va_start(a, fmt);
  va_list a2;
  va_copy(a2, a);
  int n = std::vsnprintf(nullptr, 0, fmt, a);
  va_end(a);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, a2);
  va_end(a2);
  return out;
}

}  // namespace carfield
