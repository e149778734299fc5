#pragma once

namespace physprior::cli {

// Entry point for the physprior command-line tool. Returns the process exit
// code: 0 iff all requested outputs were written and validated.
int run(int argc, char** argv);

}  // namespace physprior::cli
