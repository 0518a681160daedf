from streamdiag.cli import main

raise SystemExit(main())
