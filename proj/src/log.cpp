#include "dpfuse/log.hpp"

#include <iostream>
#include <mutex>

namespace dpfuse {
namespace {

std::mutex mu;

WarningSink& sink() {
  static WarningSink s = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return s;
}

}  // namespace

WarningSink set_warning_sink(WarningSink s) {
  std::lock_guard lock(mu);
  std::swap(sink(), s);
  return s;
}

void warn(const std::string& message) {
  std::lock_guard lock(mu);
  if (sink()) sink()(message);
}

}  // namespace dpfuse
