#include <pybind11/pybind11.h>

namespace py = pybind11;

PYBIND11_MODULE(_physprior, m) {
  m.doc() = "physprior: 2D physics video generation, frame prediction and RL";
  m.attr("__version__") = "0.1.0";
}
