#pragma once

#include <stdexcept>
#include <string>

namespace morphdet {

// Every failure surfaced by the library is a morphdet::Error; the message
// starts with a short stable tag ("unreadable file", "missing band", ...)
// that callers and tests match on.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

}  // namespace morphdet
