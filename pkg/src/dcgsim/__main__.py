from dcgsim.cli import main

raise SystemExit(main())
