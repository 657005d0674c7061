#pragma once

#include <iosfwd>

namespace pseudolabel {

// Quick invariant checks over small random inputs. Prints one PASS/FAIL line
// per check and returns true when all pass.
bool run_selftest(std::ostream& out);

}  // namespace pseudolabel
