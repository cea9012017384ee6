#ifndef WSR_ERROR_HPP
#define WSR_ERROR_HPP

#include <sstream>
#include <stdexcept>
#include <string>

namespace wsr {

// Error categories map 1:1 onto the C API status codes (and CLI exit codes).
enum class ErrKind {
  usage,     // bad arguments, shape mismatches, contract violations
  io,        // file system / decode failures
  numeric,   // non-finite values where finite ones are required
  internal,  // should-not-happen
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

namespace detail {
inline void str_append(std::ostringstream&) {}
template <typename A, typename... Rest>
void str_append(std::ostringstream& os, A&& a, Rest&&... rest) {
  os << std::forward<A>(a);
  str_append(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
std::string strcat_msg(Args&&... args) {
  std::ostringstream os;
  detail::str_append(os, std::forward<Args>(args)...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(ErrKind kind, Args&&... args) {
  throw Error(kind, strcat_msg(std::forward<Args>(args)...));
}

}  // namespace wsr

#define WSR_REQUIRE(cond, kind, ...)                  \
  do {                                                \
    if (!(cond)) ::wsr::fail((kind), __VA_ARGS__);    \
  } while (0)

#endif  // WSR_ERROR_HPP
