#include "c3r/app.hpp"

int main(int argc, char** argv) { return c3r::app::run_cli(argc, argv); }
