#include <cstdlib>
#include <string_view>

#include "autofi/kernels.hpp"

namespace autofi::kernels {

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

namespace {

const KernelTable& select() {
  const char* forced = std::getenv("AUTOFI_ISA");
  if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_table();
  if (const KernelTable* t = avx2_table()) return *t;
  return scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace autofi::kernels
