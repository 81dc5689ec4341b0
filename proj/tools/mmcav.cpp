#include "mmcav/app.hpp"

int main(int argc, char** argv) { return mmcav::app::main_entry(argc, argv); }
